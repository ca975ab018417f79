#!/usr/bin/env python3
# Copyright 2026 The DBQ Toolkit Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the bundled architecture specs in data/arch/."""

import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "arch"


def conv(name, kind, hw_out, c_in, c_out, k, hw_in, bn=True, depthwise=False):
    dot = k * k * (1 if depthwise else c_in)
    n = hw_out * hw_out * c_out
    return {
        "name": name,
        "kind": kind,
        "dot_products": n,
        "dot_length": dot,
        "weights": dot * c_out,
        "activations": n,
        "input_activations": hw_in * hw_in * c_in,
        "bn_channels": c_out if bn else 0,
    }


def fc(name, c_in, c_out):
    return {
        "name": name,
        "kind": "fully-connected",
        "dot_products": c_out,
        "dot_length": c_in,
        "weights": c_in * c_out,
        "activations": c_out,
        "input_activations": c_in,
        "bn_channels": 0,
    }


def resnet20():
    # CIFAR ResNet-20 with parameter-free (option A) shortcuts.
    layers = [conv("conv1", "first", 32, 3, 16, 3, 32)]
    hw, c_in = 32, 16
    for stage, c in enumerate((16, 32, 64)):
        for block in range(3):
            stride = 2 if stage > 0 and block == 0 else 1
            hw_out = hw // stride
            base = f"s{stage + 1}b{block + 1}"
            layers.append(conv(base + "c1", "other", hw_out, c_in, c, 3, hw))
            layers.append(conv(base + "c2", "other", hw_out, c, c, 3, hw_out))
            hw, c_in = hw_out, c
    layers.append(fc("fc", 64, 10))
    return {"name": "resnet20", "layers": layers}


def mobilenetv1():
    layers = [conv("conv1", "first", 112, 3, 32, 3, 224)]
    cfg = [(32, 64, 1), (64, 128, 2), (128, 128, 1), (128, 256, 2), (256, 256, 1), (256, 512, 2)]
    cfg += [(512, 512, 1)] * 5 + [(512, 1024, 2), (1024, 1024, 1)]
    hw = 112
    for i, (ci, co, s) in enumerate(cfg, start=1):
        hw_out = hw // s
        layers.append(conv(f"dw{i}", "depthwise", hw_out, ci, ci, 3, hw, depthwise=True))
        layers.append(conv(f"pw{i}", "pointwise", hw_out, ci, co, 1, hw_out))
        hw = hw_out
    layers.append(fc("fc", 1024, 1000))
    return {"name": "mobilenetv1", "layers": layers}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for spec in (resnet20(), mobilenetv1()):
        path = OUT / f"{spec['name']}.json"
        path.write_text(json.dumps(spec, indent=2) + "\n")
        total = sum(l["weights"] for l in spec["layers"])
        print(f"{path}: {len(spec['layers'])} layers, {total} weights")


if __name__ == "__main__":
    main()
