// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Fits a 2-branch quantizer to Gaussian weights, splits it into ternary
// branches and packs them.

#include <cstdio>
#include <vector>

#include "dbq/quantizer.hpp"
#include "dbq/quantizer_init.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

int main()
{
    dbq::Rng rng(2026);
    std::vector<double> w(256);
    for (auto& v : w) v = rng.normal(0.0, 0.05);

    const dbq::QuantizerParams p = dbq::init_quantizer(w, 2);
    std::printf("gamma1 %.4f  gamma2 %.4f  alphas %.4f %.4f\n", p.gamma1, p.gamma2, p.alphas[0], p.alphas[1]);

    const auto branches = dbq::decompose(w, p);
    const auto sparsity = dbq::branch_sparsity(branches);
    std::printf("branch sparsity %.3f %.3f (mean %.3f)\n", sparsity.per_branch[0], sparsity.per_branch[1],
                sparsity.average);

    const auto q = dbq::forward_infer(w, p);
    double mse = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) mse += (q[i] - w[i]) * (q[i] - w[i]);
    std::printf("quantization MSE %.3e\n", mse / static_cast<double>(w.size()));

    const auto blob = dbq::serde::pack(branches);
    std::printf("packed %zu weights into %zu bytes\n", w.size(), blob.size());
    return dbq::serde::unpack(blob) == branches ? 0 : 1;
}
