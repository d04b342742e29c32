#pragma once

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "grf/data.hpp"
#include "grf/nn.hpp"

namespace grf {

struct GrfConfig {
    int d_model = 16;
    int num_layers = 1;
    int heads = 4;
    int d_ff = 64;
    double dropout = 0.1;
    bool tie_directions = false;
    std::vector<ModalitySpec> modalities;
    std::vector<std::string> fusion_order;

    int n_modalities() const { return static_cast<int>(fusion_order.size()); }

    const ModalitySpec& modality(const std::string& name) const {
        for (const auto& m : modalities)
            if (m.name == name) return m;
        throw ConfigError("unknown modality in fusion order: " + name);
    }

    void validate() const {
        if (d_model < 2 || d_model % 2 != 0)
            throw ConfigError("d_model must be even and >= 2, got " + std::to_string(d_model));
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError("d_model must be divisible by heads");
        if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
        if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
        if (modalities.empty()) throw ConfigError("at least one modality required");
        std::set<std::string> declared;
        for (const auto& m : modalities) {
            if (!declared.insert(m.name).second)
                throw ConfigError("duplicate modality name: " + m.name);
            if (m.feat_dim < 1 || m.seq_len < 1)
                throw ConfigError("modality " + m.name + " has non-positive dims");
        }
        if (fusion_order.empty()) throw ConfigError("fusion order must not be empty");
        std::set<std::string> seen;
        for (const auto& name : fusion_order) {
            if (!declared.count(name)) {
                std::string valid;
                for (const auto& m : modalities) valid += (valid.empty() ? "" : ", ") + m.name;
                throw ConfigError("fusion order names unknown modality " + name +
                                  " (valid: " + valid + ")");
            }
            if (!seen.insert(name).second)
                throw ConfigError("fusion order repeats modality " + name);
        }
    }
};

// Update gate z and candidate h~ both read the concatenation [s'; m'];
// the new state is the gated blend (1 - z) ⊙ s' + z ⊙ h~. Coordinate-wise
// this is a convex combination, so the output is bounded by s' and h~.
template <typename S>
struct GatedFusionUnit {
    Linear<S> wz, wh;

    static GatedFusionUnit create(ParamStore<S>& ps, const std::string& prefix, int d_model,
                                  Rng& rng) {
        GatedFusionUnit g;
        g.wz = Linear<S>::create(ps, prefix + ".z", 2 * d_model, d_model, rng);
        g.wh = Linear<S>::create(ps, prefix + ".h", 2 * d_model, d_model, rng);
        return g;
    }

    Var forward(Tape<S>& t, Var s_prime, Var m_prime) const {
        const Tensor<S>&vs = t.value(s_prime), &vm = t.value(m_prime);
        if (!vs.same_shape(vm))
            throw DimError("gated fusion: state widths disagree, " + format_shape(vs.shape()) +
                           " vs " + format_shape(vm.shape()));
        Var cat = t.concat_last({s_prime, m_prime});
        Var z = t.sigmoid(wz.forward(t, cat));
        Var cand = t.tanh(wh.forward(t, cat));
        Var keep = t.affine(z, S(-1), S(1));  // 1 - z
        return t.add(t.mul(keep, s_prime), t.mul(z, cand));
    }
};

// Attention weights captured per layer (both directions) when requested.
template <typename S>
struct AttnStats {
    std::vector<Tensor<S>> ctx_queries_modality;  // [B, H, 1, T] per layer
    std::vector<Tensor<S>> modality_queries_ctx;  // [B, H, T, 1] per layer
};

// The shared fusion block: L symmetric cross-attention layer pairs followed
// by the gated unit. One instance serves every recurrent step, so its
// parameter count does not grow with the number of modalities.
template <typename S>
struct FusionBlock {
    std::vector<CrossAttnLayer<S>> ctx_queries;  // context stream attends into modality
    std::vector<CrossAttnLayer<S>> mod_queries;  // modality stream attends into context
    GatedFusionUnit<S> gfu;
    int d_model = 0;

    static FusionBlock create(ParamStore<S>& ps, const GrfConfig& cfg, Rng& rng) {
        FusionBlock b;
        b.d_model = cfg.d_model;
        for (int l = 1; l <= cfg.num_layers; ++l) {
            const std::string base = "fusion.layer" + std::to_string(l);
            b.ctx_queries.push_back(CrossAttnLayer<S>::create(
                ps, base + ".ctxq", cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout, rng));
            if (cfg.tie_directions)
                b.mod_queries.push_back(b.ctx_queries.back());  // aliases the same parameters
            else
                b.mod_queries.push_back(CrossAttnLayer<S>::create(
                    ps, base + ".modq", cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout, rng));
        }
        b.gfu = GatedFusionUnit<S>::create(ps, "fusion.gfu", cfg.d_model, rng);
        return b;
    }

    // h_prev [B, d] and the projected modality M_k [B, T, d] -> h_k [B, d].
    // Each layer updates both streams from the other's previous-layer value
    // (simultaneous update), then s' is the squeezed context stream and
    // m' the pooled modality stream.
    Var forward(Tape<S>& t, Var h_prev, Var M_k, const Mode& mode,
                AttnStats<S>* stats = nullptr) const {
        const int B = t.value(h_prev).dim(0);
        Var ctx = t.reshape(h_prev, {B, 1, d_model});
        Var mod = M_k;
        for (size_t l = 0; l < ctx_queries.size(); ++l) {
            Tensor<S> aw_ctx, aw_mod;
            Var ctx_next = ctx_queries[l].forward(t, ctx, mod, mode,
                                                  stats ? &aw_ctx : nullptr);
            Var mod_next = mod_queries[l].forward(t, mod, ctx, mode,
                                                  stats ? &aw_mod : nullptr);
            if (stats) {
                stats->ctx_queries_modality.push_back(std::move(aw_ctx));
                stats->modality_queries_ctx.push_back(std::move(aw_mod));
            }
            ctx = ctx_next;
            mod = mod_next;
        }
        Var s_prime = t.reshape(ctx, {B, d_model});
        Var m_prime = pool(t, mod);
        return gfu.forward(t, s_prime, m_prime);
    }
};

// Context vectors collected after each fusion stage, h_1 .. h_n.
template <typename S>
struct FusionTrace {
    std::vector<Var> stages;
};

// The recurrent pipeline: project each modality into the shared space, seed
// the context with the pooled first modality, then fold the rest in through
// the shared fusion block and regress from the final state.
template <typename S>
class GrfModel {
public:
    explicit GrfModel(GrfConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(init_seed);
        // Projections are created in declared-modality order (not fusion
        // order) so two models differing only in fusion order draw identical
        // weights; modalities outside the fusion order get no parameters.
        for (const auto& m : cfg_.modalities) {
            if (!in_order(m.name)) continue;
            proj_.emplace(m.name, Linear<S>::create(params_, "proj." + m.name, m.feat_dim,
                                                    cfg_.d_model, rng));
            pe_.emplace(m.name, positional_encoding<S>(m.seq_len, cfg_.d_model));
        }
        if (cfg_.n_modalities() >= 2) block_ = FusionBlock<S>::create(params_, cfg_, rng);
        head_ = PredictionHead<S>::create(params_, "head", cfg_.d_model, cfg_.d_model / 2, rng);
    }

    const GrfConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }
    const FusionBlock<S>& block() const { return block_; }

    // M_i = PE + X_i W + b, shapes [B, T_i, d].
    Var project(Tape<S>& t, const std::string& name, const Tensor<S>& X) const {
        const ModalitySpec& m = cfg_.modality(name);
        if (X.rank() != 3 || X.dim(1) != m.seq_len || X.dim(2) != m.feat_dim)
            throw DimError("modality " + name + " expects [batch, " +
                           std::to_string(m.seq_len) + ", " + std::to_string(m.feat_dim) +
                           "], got " + format_shape(X.shape()));
        return t.add_const(proj_.at(name).forward(t, t.leaf(X)), pe_.at(name));
    }

    Var forward(Tape<S>& t, const ModalityBatch<S>& batch, const Mode& mode,
                FusionTrace<S>* trace = nullptr, AttnStats<S>* stats = nullptr) const {
        Var h = pool(t, project(t, cfg_.fusion_order[0], batch.stream(cfg_.fusion_order[0])));
        if (trace) trace->stages.push_back(h);
        for (size_t k = 1; k < cfg_.fusion_order.size(); ++k) {
            Var M = project(t, cfg_.fusion_order[k], batch.stream(cfg_.fusion_order[k]));
            h = block_.forward(t, h, M, mode, stats);
            if (trace) trace->stages.push_back(h);
        }
        return head_.forward(t, h);
    }

private:
    bool in_order(const std::string& name) const {
        for (const auto& o : cfg_.fusion_order)
            if (o == name) return true;
        return false;
    }

    GrfConfig cfg_;
    ParamStore<S> params_;
    std::map<std::string, Linear<S>> proj_;
    FusionBlock<S> block_;
    PredictionHead<S> head_;
    std::map<std::string, Tensor<S>> pe_;
};

// Baseline with one dedicated cross-attention stack per ordered modality
// pair (i, j): stream i repeatedly attends into the fixed projected stream
// j, the n(n-1) pooled results are concatenated into a widened head. Cost
// grows quadratically in the modality count by construction.
template <typename S>
class PairwiseModel {
public:
    explicit PairwiseModel(GrfConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.n_modalities() < 2)
            throw ConfigError("pairwise baseline needs at least two modalities");
        Rng rng(init_seed);
        for (const auto& m : cfg_.modalities) {
            bool used = false;
            for (const auto& o : cfg_.fusion_order) used = used || o == m.name;
            if (!used) continue;
            proj_.emplace(m.name, Linear<S>::create(params_, "proj." + m.name, m.feat_dim,
                                                    cfg_.d_model, rng));
            pe_.emplace(m.name, positional_encoding<S>(m.seq_len, cfg_.d_model));
        }
        const auto& order = cfg_.fusion_order;
        for (const auto& qi : order)
            for (const auto& kj : order) {
                if (qi == kj) continue;
                std::vector<CrossAttnLayer<S>> stack;
                for (int l = 1; l <= cfg_.num_layers; ++l)
                    stack.push_back(CrossAttnLayer<S>::create(
                        params_, "pair." + qi + "2" + kj + ".layer" + std::to_string(l),
                        cfg_.d_model, cfg_.heads, cfg_.d_ff, cfg_.dropout, rng));
                pairs_.emplace_back(qi, kj, std::move(stack));
            }
        const int n = cfg_.n_modalities();
        head_ = PredictionHead<S>::create(params_, "head", n * (n - 1) * cfg_.d_model,
                                          cfg_.d_model / 2, rng);
    }

    const GrfConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }
    size_t num_stacks() const { return pairs_.size(); }

    Var forward(Tape<S>& t, const ModalityBatch<S>& batch, const Mode& mode) const {
        std::map<std::string, Var> projected;
        for (const auto& name : cfg_.fusion_order)
            projected.emplace(name, project(t, name, batch.stream(name)));
        std::vector<Var> pooled;
        for (const auto& [qi, kj, stack] : pairs_) {
            Var stream = projected.at(qi);
            for (const auto& layer : stack)
                stream = layer.forward(t, stream, projected.at(kj), mode);
            pooled.push_back(pool(t, stream));
        }
        return head_.forward(t, t.concat_last(pooled));
    }

private:
    Var project(Tape<S>& t, const std::string& name, const Tensor<S>& X) const {
        const ModalitySpec& m = cfg_.modality(name);
        if (X.rank() != 3 || X.dim(1) != m.seq_len || X.dim(2) != m.feat_dim)
            throw DimError("modality " + name + " expects [batch, " +
                           std::to_string(m.seq_len) + ", " + std::to_string(m.feat_dim) +
                           "], got " + format_shape(X.shape()));
        return t.add_const(proj_.at(name).forward(t, t.leaf(X)), pe_.at(name));
    }

    GrfConfig cfg_;
    ParamStore<S> params_;
    std::map<std::string, Linear<S>> proj_;
    std::vector<std::tuple<std::string, std::string, std::vector<CrossAttnLayer<S>>>> pairs_;
    PredictionHead<S> head_;
    std::map<std::string, Tensor<S>> pe_;
};

}  // namespace grf
