#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotforge/rng.hpp"
#include "cotforge/vocab.hpp"

namespace cotforge {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int context_len = 256;
    int vocab_size = 0;
    double dropout = 0.0;  // kept at zero for determinism

    void validate() const {
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || context_len <= 0 ||
            vocab_size <= 0)
            throw ModelError("model dimensions must be positive");
        if (d_model % n_heads != 0) throw ModelError("d_model must be divisible by n_heads");
        if (dropout != 0.0) throw ModelError("dropout is not supported");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},     {"n_layers", n_layers},
                {"n_heads", n_heads},     {"d_ff", d_ff},
                {"context_len", context_len}, {"vocab_size", vocab_size},
                {"dropout", dropout}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.context_len = j.at("context_len").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.dropout = j.value("dropout", 0.0);
        return c;
    }
};

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Weights are stored input-major: y = x * W with W of shape (in, out).
template <class S>
struct NetArrays {
    MatT<S> wte;  // (vocab, d)
    MatT<S> wpe;  // (context, d)
    struct Layer {
        MatT<S> ln1_g, ln1_b;  // (1, d)
        MatT<S> wq, wk, wv, wo;  // (d, d)
        MatT<S> ln2_g, ln2_b;  // (1, d)
        MatT<S> w1;  // (d, ff)
        MatT<S> w2;  // (ff, d)
    };
    std::vector<Layer> layers;
    MatT<S> lnf_g, lnf_b;  // (1, d)
    MatT<S> w_out;  // (d, vocab)
    MatT<S> b_out;  // (1, vocab)
};

template <class S, class F>
void visit_arrays(NetArrays<S>& a, F&& f) {
    f("wte", a.wte);
    f("wpe", a.wpe);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        auto& l = a.layers[i];
        f(p + "ln1_g", l.ln1_g);
        f(p + "ln1_b", l.ln1_b);
        f(p + "wq", l.wq);
        f(p + "wk", l.wk);
        f(p + "wv", l.wv);
        f(p + "wo", l.wo);
        f(p + "ln2_g", l.ln2_g);
        f(p + "ln2_b", l.ln2_b);
        f(p + "w1", l.w1);
        f(p + "w2", l.w2);
    }
    f("lnf_g", a.lnf_g);
    f("lnf_b", a.lnf_b);
    f("w_out", a.w_out);
    f("b_out", a.b_out);
}

template <class S, class F>
void visit_arrays(const NetArrays<S>& a, F&& f) {
    visit_arrays(const_cast<NetArrays<S>&>(a),
                 [&](const std::string& n, MatT<S>& m) { f(n, static_cast<const MatT<S>&>(m)); });
}

// Low-rank adapter on one weight matrix. `down` (in, r) starts small random,
// `up` (r, out) starts zero, so the adapter is a no-op until trained.
// Effective weight: W + (alpha / r) * down * up.
template <class S>
struct LoraAdapter {
    MatT<S> down;
    MatT<S> up;
};

template <class S>
struct ModelT {
    ModelConfig config;
    Vocab vocab;
    NetArrays<S> arrays;

    int lora_rank = 0;
    double lora_alpha = 0.0;
    std::map<std::string, LoraAdapter<S>> adapters;

    bool lora_attached() const { return !adapters.empty(); }
    double lora_scale() const { return lora_alpha / lora_rank; }

    // Weights seen by the forward pass; refreshed after adapter updates.
    const NetArrays<S>& active() const { return adapters.empty() ? arrays : effective_; }
    void refresh_effective();

    NetArrays<S> effective_;
};

template <class S>
struct GradsT {
    NetArrays<S> arrays;
    std::map<std::string, LoraAdapter<S>> adapters;

    void zero() {
        visit_arrays(arrays, [](const std::string&, MatT<S>& m) { m.setZero(); });
        for (auto& [k, a] : adapters) {
            a.down.setZero();
            a.up.setZero();
        }
    }
    double squared_norm() const {
        double s = 0;
        visit_arrays(const_cast<NetArrays<S>&>(arrays), [&](const std::string&, MatT<S>& m) {
            s += m.template cast<double>().squaredNorm();
        });
        for (const auto& [k, a] : adapters)
            s += a.down.template cast<double>().squaredNorm() +
                 a.up.template cast<double>().squaredNorm();
        return s;
    }
};

// --- construction -------------------------------------------------------

template <class S>
ModelT<S> init_model(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed);

template <class S>
GradsT<S> make_grads(const ModelT<S>& model);

// name -> (param, grad) over the trainable arrays only: adapters when LoRA
// is attached, every array otherwise.
template <class S, class F>
void for_each_trainable(ModelT<S>& model, GradsT<S>& grads, F&& f) {
    if (model.lora_attached()) {
        for (auto& [name, adapter] : model.adapters) {
            auto& g = grads.adapters.at(name);
            f(name + ".lora_a", adapter.down, g.down);
            f(name + ".lora_b", adapter.up, g.up);
        }
        return;
    }
    visit_arrays(model.arrays, [&](const std::string& name, MatT<S>& p) {
        bool matched = false;
        visit_arrays(grads.arrays, [&](const std::string& gname, MatT<S>& g) {
            if (gname == name) {
                f(name, p, g);
                matched = true;
            }
        });
        (void)matched;
    });
}

// --- LoRA ----------------------------------------------------------------

std::vector<std::string> default_lora_targets(const ModelConfig& config);

template <class S>
void lora_attach(ModelT<S>& model, int rank, double alpha, std::uint64_t seed,
                 const std::vector<std::string>& targets = {});
template <class S>
void lora_merge(ModelT<S>& model);

// --- inference & scoring --------------------------------------------------

// Per-position next-token log-probability rows for a raw id sequence.
template <class S>
MatT<S> forward_logprobs(const ModelT<S>& model, std::span<const int> ids);

// log p(completion | prompt) with the EOS anchor prepended internally. The
// caller appends the terminal EOS to completion_ids when scoring sentences.
template <class S>
double seq_logprob(const ModelT<S>& model, std::span<const int> prompt_ids,
                   std::span<const int> completion_ids);

// Same quantity, optionally accumulating coeff * d(logp)/d(params) into
// grads. full_ids must already carry the anchor; completion_start indexes
// the first scored token.
template <class S>
double score_completion(const ModelT<S>& model, std::span<const int> full_ids,
                        std::size_t completion_start, GradsT<S>* grads, double coeff);

struct StopRule {
    bool at_eos = true;
    bool at_newline = false;
    bool at_full_stop = false;

    static StopRule eos() { return {true, false, false}; }
    static StopRule sentence() { return {true, true, true}; }
    static StopRule line() { return {true, true, false}; }
};

template <class S>
std::string sample(const ModelT<S>& model, std::span<const int> prompt_ids, StopRule stop,
                   int max_new, double temperature, std::uint64_t seed);

// --- checkpoints -----------------------------------------------------------

struct CheckpointMeta {
    std::int64_t step_count = 0;
    std::uint64_t seed = 0;
    std::string objective = "init";
    std::string parent_digest;
    nlohmann::json extra;
};

using Model = ModelT<float>;
using Grads = GradsT<float>;

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);
Model load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace cotforge

#include "cotforge/model_impl.hpp"
