#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "grf/tensor.hpp"

namespace grf {

// One input stream's geometry: feature width d_i and sequence length T_i.
struct ModalitySpec {
    std::string name;
    int feat_dim = 1;
    int seq_len = 1;
};

// A batch of aligned multimodal samples: one [B, T_i, d_i] tensor per
// modality plus labels in [-3, 3] and stable sample ids for export.
template <typename S>
struct ModalityBatch {
    std::vector<std::string> names;
    std::vector<Tensor<S>> streams;
    Tensor<S> labels;              // [B]
    std::vector<int64_t> ids;

    int64_t size() const { return static_cast<int64_t>(ids.size()); }

    const Tensor<S>& stream(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return streams[i];
        throw InputError("batch is missing modality: " + name);
    }

    // Rows picked by index, preserving order; used for shuffled minibatches.
    ModalityBatch gather(const std::vector<int64_t>& rows) const {
        ModalityBatch out;
        out.names = names;
        const int B = static_cast<int>(rows.size());
        for (const Tensor<S>& src : streams) {
            const int T = src.dim(1), d = src.dim(2);
            Tensor<S> dst({B, T, d});
            for (int b = 0; b < B; ++b) {
                const S* from = src.data() + rows[static_cast<size_t>(b)] * T * d;
                S* to = dst.data() + static_cast<int64_t>(b) * T * d;
                std::copy(from, from + static_cast<int64_t>(T) * d, to);
            }
            out.streams.push_back(std::move(dst));
        }
        out.labels = Tensor<S>({B});
        for (int b = 0; b < B; ++b) {
            out.labels[b] = labels[rows[static_cast<size_t>(b)]];
            out.ids.push_back(ids[static_cast<size_t>(rows[static_cast<size_t>(b)])]);
        }
        return out;
    }
};

enum class TaskMode { parity, sum };

struct SyntheticTaskSpec {
    std::vector<ModalitySpec> modalities;
    double noise_std = 0.05;
    TaskMode mode = TaskMode::parity;
    int n_train = 2000;
    int n_val = 500;
    int n_test = 500;

    void validate() const {
        if (modalities.empty()) throw ConfigError("synthetic task needs at least one modality");
        if (mode == TaskMode::parity && modalities.size() < 2)
            throw ConfigError("parity task needs at least two modalities");
        if (noise_std < 0) throw ConfigError("noise_std must be non-negative");
        if (n_train < 1 || n_val < 0 || n_test < 0)
            throw ConfigError("split sizes must be positive (train) / non-negative");
        for (const auto& m : modalities)
            if (m.feat_dim < 1 || m.seq_len < 1)
                throw ConfigError("modality " + m.name + " has non-positive dims");
    }
};

template <typename S>
struct SyntheticData {
    ModalityBatch<S> train, val, test;
    std::vector<Tensor<S>> directions;   // the fixed unit direction u_i per modality
    std::vector<std::vector<S>> latents_train;  // c_i per sample, for diagnostics
};

// Per sample each modality carries a hidden scalar c_i drawn from
// [-1, -0.2] ∪ [0.2, 1] (the gap keeps signs unambiguous under noise),
// embedded along a fixed random unit direction: X_i[t] = c_i * u_i + noise.
// parity labels y = 3 * sign(prod c_i); sum labels y = clamp(sum c_i, -3, 3).
// Parity makes any single modality useless on its own: the label depends
// only on the product of signs.
template <typename S>
SyntheticData<S> generate_synthetic(const SyntheticTaskSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    SyntheticData<S> out;
    const size_t n_mod = spec.modalities.size();
    for (const auto& m : spec.modalities) {
        Tensor<S> u({m.feat_dim});
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (int j = 0; j < m.feat_dim; ++j) {
                const double x = rng.normal(0.0, 1.0);
                u[j] = static_cast<S>(x);
                norm2 += x * x;
            }
        } while (norm2 < 1e-12);
        const S inv = static_cast<S>(1.0 / std::sqrt(norm2));
        for (int j = 0; j < m.feat_dim; ++j) u[j] *= inv;
        out.directions.push_back(std::move(u));
    }

    int64_t next_id = 0;
    auto fill_split = [&](ModalityBatch<S>& batch, int count, bool keep_latents) {
        for (const auto& m : spec.modalities) {
            batch.names.push_back(m.name);
            batch.streams.emplace_back(count == 0 ? Tensor<S>()
                                                  : Tensor<S>::zeros({count, m.seq_len,
                                                                      m.feat_dim}));
        }
        if (count == 0) return;
        batch.labels = Tensor<S>({count});
        for (int s = 0; s < count; ++s) {
            std::vector<S> c(n_mod);
            for (size_t i = 0; i < n_mod; ++i) {
                const double mag = rng.uniform(0.2, 1.0);
                const double sign = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
                c[i] = static_cast<S>(sign * mag);
            }
            double label;
            if (spec.mode == TaskMode::parity) {
                double prod = 1.0;
                for (S ci : c) prod *= static_cast<double>(ci);
                label = prod >= 0 ? 3.0 : -3.0;
            } else {
                double total = 0.0;
                for (S ci : c) total += static_cast<double>(ci);
                label = std::clamp(total, -3.0, 3.0);
            }
            batch.labels[s] = static_cast<S>(label);
            batch.ids.push_back(next_id++);
            for (size_t i = 0; i < n_mod; ++i) {
                const auto& m = spec.modalities[i];
                Tensor<S>& X = batch.streams[i];
                const Tensor<S>& u = out.directions[i];
                for (int t = 0; t < m.seq_len; ++t)
                    for (int j = 0; j < m.feat_dim; ++j)
                        X.at({s, t, j}) = c[i] * u[j] +
                                          static_cast<S>(rng.normal(0.0, spec.noise_std));
            }
            if (keep_latents) out.latents_train.push_back(std::move(c));
        }
    };

    fill_split(out.train, spec.n_train, true);
    fill_split(out.val, spec.n_val, false);
    fill_split(out.test, spec.n_test, false);
    return out;
}

}  // namespace grf
