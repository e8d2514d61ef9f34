#pragma once

// Template implementation for model.hpp. The forward/backward passes are
// written against Eigen row-major matrices; softmax and layernorm statistics
// accumulate in double regardless of the parameter scalar.

#include <algorithm>
#include <limits>

namespace cotforge {

namespace detail {

inline double stable_log_sum_exp_row(const double* x, int n, double maxv) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - maxv);
    return maxv + std::log(s);
}

template <class S>
void layernorm_forward(const MatT<S>& x, const MatT<S>& g, const MatT<S>& b, MatT<S>& out,
                       Eigen::VectorXd& mean, Eigen::VectorXd& istd) {
    constexpr double kEps = 1e-5;
    const Eigen::Index T = x.rows(), d = x.cols();
    out.resize(T, d);
    mean.resize(T);
    istd.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        double m = 0, v = 0;
        for (Eigen::Index j = 0; j < d; ++j) m += static_cast<double>(x(t, j));
        m /= static_cast<double>(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double c = static_cast<double>(x(t, j)) - m;
            v += c * c;
        }
        v /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(v + kEps);
        mean(t) = m;
        istd(t) = is;
        for (Eigen::Index j = 0; j < d; ++j)
            out(t, j) = static_cast<S>(((static_cast<double>(x(t, j)) - m) * is) *
                                           static_cast<double>(g(0, j)) +
                                       static_cast<double>(b(0, j)));
    }
}

template <class S>
void layernorm_backward(const MatT<S>& dy, const MatT<S>& x, const MatT<S>& g,
                        const Eigen::VectorXd& mean, const Eigen::VectorXd& istd, MatT<S>& dx,
                        MatT<S>& dg, MatT<S>& db) {
    const Eigen::Index T = x.rows(), d = x.cols();
    dx.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double m = mean(t), is = istd(t);
        double mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(x(t, j)) - m) * is;
            const double dyv = static_cast<double>(dy(t, j));
            const double dxhat = dyv * static_cast<double>(g(0, j));
            dg(0, j) += static_cast<S>(dyv * xhat);
            db(0, j) += static_cast<S>(dyv);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(x(t, j)) - m) * is;
            const double dxhat = static_cast<double>(dy(t, j)) * static_cast<double>(g(0, j));
            dx(t, j) = static_cast<S>(is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
        }
    }
}

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad_scalar(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014327;  // 1/sqrt(2*pi)
    const double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    return Phi + x * phi;
}

// Causal multi-head attention probabilities for one head, row by row.
template <class S>
void masked_softmax_rows(MatT<S>& scores) {
    const Eigen::Index T = scores.rows();
    for (Eigen::Index i = 0; i < T; ++i) {
        double maxv = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j)
            maxv = std::max(maxv, static_cast<double>(scores(i, j)));
        double sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) sum += std::exp(static_cast<double>(scores(i, j)) - maxv);
        const double inv = 1.0 / sum;
        for (Eigen::Index j = 0; j <= i; ++j)
            scores(i, j) = static_cast<S>(std::exp(static_cast<double>(scores(i, j)) - maxv) * inv);
        for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = S(0);
    }
}

template <class S>
struct LayerCache {
    MatT<S> x_in, ln1_out, q, k, v, ctx, x_mid, ln2_out, h_pre, h_act;
    Eigen::VectorXd ln1_mean, ln1_istd, ln2_mean, ln2_istd;
};

template <class S>
struct FwdCache {
    std::vector<int> ids;
    MatT<S> x0;
    std::vector<LayerCache<S>> layers;
    MatT<S> x_last, lnf_out;
    Eigen::VectorXd lnf_mean, lnf_istd;
    MatT<S> logprobs;
};

template <class S>
void attention_forward(const typename NetArrays<S>::Layer& l, int n_heads, const MatT<S>& ln1_out,
                       MatT<S>& q, MatT<S>& k, MatT<S>& v, MatT<S>& ctx) {
    const Eigen::Index T = ln1_out.rows(), d = ln1_out.cols();
    const Eigen::Index dh = d / n_heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    q.noalias() = ln1_out * l.wq;
    k.noalias() = ln1_out * l.wk;
    v.noalias() = ln1_out * l.wv;
    ctx.resize(T, d);
    MatT<S> scores(T, T);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = q.middleCols(h * dh, dh);
        auto kh = k.middleCols(h * dh, dh);
        auto vh = v.middleCols(h * dh, dh);
        scores.noalias() = qh * kh.transpose() * inv_sqrt;
        masked_softmax_rows(scores);
        ctx.middleCols(h * dh, dh).noalias() = scores * vh;
    }
}

template <class S>
void forward_pass(const ModelT<S>& model, std::span<const int> ids, FwdCache<S>* cache,
                  MatT<S>& logprobs) {
    const ModelConfig& cfg = model.config;
    const NetArrays<S>& w = model.active();
    const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
    if (T == 0) throw ModelError("empty id sequence");
    if (T > cfg.context_len) throw ModelError("sequence exceeds context window");

    MatT<S> x(T, cfg.d_model);
    for (Eigen::Index t = 0; t < T; ++t) {
        const int id = ids[static_cast<std::size_t>(t)];
        if (id < 0 || id >= cfg.vocab_size) throw ModelError("token id out of range");
        x.row(t) = w.wte.row(id) + w.wpe.row(t);
    }
    if (cache) {
        cache->ids.assign(ids.begin(), ids.end());
        cache->x0 = x;
        cache->layers.assign(static_cast<std::size_t>(cfg.n_layers), LayerCache<S>{});
    }

    MatT<S> ln_out, q, k, v, ctx, h_pre, h_act;
    Eigen::VectorXd mean, istd;
    for (int li = 0; li < cfg.n_layers; ++li) {
        const auto& l = w.layers[static_cast<std::size_t>(li)];
        LayerCache<S>* lc = cache ? &cache->layers[static_cast<std::size_t>(li)] : nullptr;
        if (lc) lc->x_in = x;

        layernorm_forward(x, l.ln1_g, l.ln1_b, ln_out, mean, istd);
        if (lc) {
            lc->ln1_out = ln_out;
            lc->ln1_mean = mean;
            lc->ln1_istd = istd;
        }
        attention_forward<S>(l, cfg.n_heads, ln_out, q, k, v, ctx);
        x.noalias() += ctx * l.wo;
        if (lc) {
            lc->q = q;
            lc->k = k;
            lc->v = v;
            lc->ctx = ctx;
            lc->x_mid = x;
        }

        layernorm_forward(x, l.ln2_g, l.ln2_b, ln_out, mean, istd);
        if (lc) {
            lc->ln2_out = ln_out;
            lc->ln2_mean = mean;
            lc->ln2_istd = istd;
        }
        h_pre.noalias() = ln_out * l.w1;
        h_act = h_pre;
        for (Eigen::Index i = 0; i < h_act.rows(); ++i)
            for (Eigen::Index j = 0; j < h_act.cols(); ++j)
                h_act(i, j) = static_cast<S>(gelu_scalar(static_cast<double>(h_pre(i, j))));
        if (lc) {
            lc->h_pre = h_pre;
            lc->h_act = h_act;
        }
        x.noalias() += h_act * l.w2;
    }

    if (cache) cache->x_last = x;
    layernorm_forward(x, w.lnf_g, w.lnf_b, ln_out, mean, istd);
    if (cache) {
        cache->lnf_out = ln_out;
        cache->lnf_mean = mean;
        cache->lnf_istd = istd;
    }

    logprobs.resize(T, cfg.vocab_size);
    logprobs.noalias() = ln_out * w.w_out;
    logprobs.rowwise() += w.b_out.row(0);
    std::vector<double> row(static_cast<std::size_t>(cfg.vocab_size));
    for (Eigen::Index t = 0; t < T; ++t) {
        double maxv = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < cfg.vocab_size; ++j) {
            row[static_cast<std::size_t>(j)] = static_cast<double>(logprobs(t, j));
            maxv = std::max(maxv, row[static_cast<std::size_t>(j)]);
        }
        const double lse = stable_log_sum_exp_row(row.data(), cfg.vocab_size, maxv);
        for (int j = 0; j < cfg.vocab_size; ++j)
            logprobs(t, j) = static_cast<S>(row[static_cast<std::size_t>(j)] - lse);
    }
    if (cache) cache->logprobs = logprobs;
}

// Backward from d(logits) rows restricted to [row_begin, row_end).
template <class S>
void backward_pass(const ModelT<S>& model, const FwdCache<S>& cache, const MatT<S>& dlogits,
                   Eigen::Index row_begin, Eigen::Index row_end, GradsT<S>& grads) {
    const ModelConfig& cfg = model.config;
    const NetArrays<S>& w = model.active();
    const Eigen::Index T = static_cast<Eigen::Index>(cache.ids.size());
    const Eigen::Index dh = cfg.d_model / cfg.n_heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    const Eigen::Index rows = row_end - row_begin;
    grads.arrays.w_out.noalias() +=
        cache.lnf_out.middleRows(row_begin, rows).transpose() * dlogits.middleRows(row_begin, rows);
    grads.arrays.b_out.row(0) += dlogits.middleRows(row_begin, rows).colwise().sum();

    MatT<S> dx = MatT<S>::Zero(T, cfg.d_model);
    dx.middleRows(row_begin, rows).noalias() =
        dlogits.middleRows(row_begin, rows) * w.w_out.transpose();

    MatT<S> dtmp;
    layernorm_backward(dx, cache.x_last, w.lnf_g, cache.lnf_mean, cache.lnf_istd, dtmp,
                       grads.arrays.lnf_g, grads.arrays.lnf_b);
    dx = dtmp;

    MatT<S> scores(T, T), dP(T, T), dq(T, cfg.d_model), dk(T, cfg.d_model), dv(T, cfg.d_model);
    for (int li = cfg.n_layers - 1; li >= 0; --li) {
        const auto& l = w.layers[static_cast<std::size_t>(li)];
        auto& gl = grads.arrays.layers[static_cast<std::size_t>(li)];
        const auto& lc = cache.layers[static_cast<std::size_t>(li)];

        // x = x_mid + gelu(ln2(x_mid) w1) w2
        MatT<S> dh_act = dx * l.w2.transpose();
        gl.w2.noalias() += lc.h_act.transpose() * dx;
        MatT<S> dh_pre(dh_act.rows(), dh_act.cols());
        for (Eigen::Index i = 0; i < dh_pre.rows(); ++i)
            for (Eigen::Index j = 0; j < dh_pre.cols(); ++j)
                dh_pre(i, j) = static_cast<S>(
                    static_cast<double>(dh_act(i, j)) *
                    gelu_grad_scalar(static_cast<double>(lc.h_pre(i, j))));
        gl.w1.noalias() += lc.ln2_out.transpose() * dh_pre;
        MatT<S> dln2 = dh_pre * l.w1.transpose();
        layernorm_backward(dln2, lc.x_mid, l.ln2_g, lc.ln2_mean, lc.ln2_istd, dtmp, gl.ln2_g,
                           gl.ln2_b);
        dx += dtmp;  // residual + norm path, both reach x_mid

        // x_mid = x_in + attention(ln1(x_in))
        gl.wo.noalias() += lc.ctx.transpose() * dx;
        MatT<S> dctx = dx * l.wo.transpose();
        dq.setZero();
        dk.setZero();
        dv.setZero();
        for (int h = 0; h < cfg.n_heads; ++h) {
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            auto vh = lc.v.middleCols(h * dh, dh);
            scores.noalias() = qh * kh.transpose() * inv_sqrt;
            masked_softmax_rows(scores);  // P, bit-identical to forward
            auto dctx_h = dctx.middleCols(h * dh, dh);
            dP.noalias() = dctx_h * vh.transpose();
            dv.middleCols(h * dh, dh).noalias() = scores.transpose() * dctx_h;
            for (Eigen::Index i = 0; i < T; ++i) {
                double rowdot = 0;
                for (Eigen::Index j = 0; j <= i; ++j)
                    rowdot += static_cast<double>(dP(i, j)) * static_cast<double>(scores(i, j));
                for (Eigen::Index j = 0; j <= i; ++j)
                    dP(i, j) = static_cast<S>((static_cast<double>(dP(i, j)) - rowdot) *
                                              static_cast<double>(scores(i, j)));
                for (Eigen::Index j = i + 1; j < T; ++j) dP(i, j) = S(0);
            }
            dq.middleCols(h * dh, dh).noalias() = dP * kh * inv_sqrt;
            dk.middleCols(h * dh, dh).noalias() = dP.transpose() * qh * inv_sqrt;
        }
        gl.wq.noalias() += lc.ln1_out.transpose() * dq;
        gl.wk.noalias() += lc.ln1_out.transpose() * dk;
        gl.wv.noalias() += lc.ln1_out.transpose() * dv;
        MatT<S> dln1 = dq * l.wq.transpose();
        dln1.noalias() += dk * l.wk.transpose();
        dln1.noalias() += dv * l.wv.transpose();
        layernorm_backward(dln1, lc.x_in, l.ln1_g, lc.ln1_mean, lc.ln1_istd, dtmp, gl.ln1_g,
                           gl.ln1_b);
        dx += dtmp;
    }

    for (Eigen::Index t = 0; t < T; ++t) {
        grads.arrays.wte.row(cache.ids[static_cast<std::size_t>(t)]) += dx.row(t);
        grads.arrays.wpe.row(t) += dx.row(t);
    }
}

}  // namespace detail

// --- construction -------------------------------------------------------

template <class S>
ModelT<S> init_model(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed) {
    ModelConfig cfg = config;
    cfg.vocab_size = vocab.size();
    cfg.validate();

    ModelT<S> m;
    m.config = cfg;
    m.vocab = vocab;

    Rng rng(derive_seed(seed, "init", {static_cast<std::uint64_t>(cfg.d_model),
                                       static_cast<std::uint64_t>(cfg.n_layers)}));
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
    auto fill = [&rng](MatT<S>& mat, Eigen::Index r, Eigen::Index c, double std_dev) {
        mat.resize(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j)
                mat(i, j) = static_cast<S>(rng.normal(0.0, std_dev));
    };

    auto& a = m.arrays;
    fill(a.wte, cfg.vocab_size, cfg.d_model, base_std);
    fill(a.wpe, cfg.context_len, cfg.d_model, base_std);
    a.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : a.layers) {
        l.ln1_g = MatT<S>::Ones(1, cfg.d_model);
        l.ln1_b = MatT<S>::Zero(1, cfg.d_model);
        fill(l.wq, cfg.d_model, cfg.d_model, base_std);
        fill(l.wk, cfg.d_model, cfg.d_model, base_std);
        fill(l.wv, cfg.d_model, cfg.d_model, base_std);
        fill(l.wo, cfg.d_model, cfg.d_model, resid_std);
        l.ln2_g = MatT<S>::Ones(1, cfg.d_model);
        l.ln2_b = MatT<S>::Zero(1, cfg.d_model);
        fill(l.w1, cfg.d_model, cfg.d_ff, base_std);
        fill(l.w2, cfg.d_ff, cfg.d_model, resid_std);
    }
    a.lnf_g = MatT<S>::Ones(1, cfg.d_model);
    a.lnf_b = MatT<S>::Zero(1, cfg.d_model);
    fill(a.w_out, cfg.d_model, cfg.vocab_size, base_std);
    a.b_out = MatT<S>::Zero(1, cfg.vocab_size);
    return m;
}

template <class S>
GradsT<S> make_grads(const ModelT<S>& model) {
    GradsT<S> g;
    g.arrays.wte = MatT<S>::Zero(model.arrays.wte.rows(), model.arrays.wte.cols());
    g.arrays.wpe = MatT<S>::Zero(model.arrays.wpe.rows(), model.arrays.wpe.cols());
    g.arrays.layers.resize(model.arrays.layers.size());
    for (std::size_t i = 0; i < model.arrays.layers.size(); ++i) {
        const auto& l = model.arrays.layers[i];
        auto& gl = g.arrays.layers[i];
        gl.ln1_g = MatT<S>::Zero(1, l.ln1_g.cols());
        gl.ln1_b = MatT<S>::Zero(1, l.ln1_b.cols());
        gl.wq = MatT<S>::Zero(l.wq.rows(), l.wq.cols());
        gl.wk = MatT<S>::Zero(l.wk.rows(), l.wk.cols());
        gl.wv = MatT<S>::Zero(l.wv.rows(), l.wv.cols());
        gl.wo = MatT<S>::Zero(l.wo.rows(), l.wo.cols());
        gl.ln2_g = MatT<S>::Zero(1, l.ln2_g.cols());
        gl.ln2_b = MatT<S>::Zero(1, l.ln2_b.cols());
        gl.w1 = MatT<S>::Zero(l.w1.rows(), l.w1.cols());
        gl.w2 = MatT<S>::Zero(l.w2.rows(), l.w2.cols());
    }
    g.arrays.lnf_g = MatT<S>::Zero(1, model.arrays.lnf_g.cols());
    g.arrays.lnf_b = MatT<S>::Zero(1, model.arrays.lnf_b.cols());
    g.arrays.w_out = MatT<S>::Zero(model.arrays.w_out.rows(), model.arrays.w_out.cols());
    g.arrays.b_out = MatT<S>::Zero(1, model.arrays.b_out.cols());
    for (const auto& [name, a] : model.adapters) {
        LoraAdapter<S> ga;
        ga.down = MatT<S>::Zero(a.down.rows(), a.down.cols());
        ga.up = MatT<S>::Zero(a.up.rows(), a.up.cols());
        g.adapters.emplace(name, std::move(ga));
    }
    return g;
}

// --- LoRA ----------------------------------------------------------------

inline std::vector<std::string> default_lora_targets(const ModelConfig& config) {
    std::vector<std::string> t;
    for (int i = 0; i < config.n_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        for (const char* n : {"wq", "wk", "wv", "wo", "w1", "w2"}) t.push_back(p + n);
    }
    return t;
}

template <class S>
void ModelT<S>::refresh_effective() {
    if (adapters.empty()) return;
    effective_ = arrays;
    const S scale = static_cast<S>(lora_scale());
    visit_arrays(effective_, [&](const std::string& name, MatT<S>& m) {
        auto it = adapters.find(name);
        if (it != adapters.end()) m.noalias() += scale * (it->second.down * it->second.up);
    });
}

template <class S>
void lora_attach(ModelT<S>& model, int rank, double alpha, std::uint64_t seed,
                 const std::vector<std::string>& targets) {
    if (model.lora_attached()) throw ModelError("adapters already attached");
    if (rank < 1) throw ModelError("adapter rank must be >= 1");
    const auto names = targets.empty() ? default_lora_targets(model.config) : targets;

    Rng rng(derive_seed(seed, "lora", {static_cast<std::uint64_t>(rank)}));
    std::map<std::string, LoraAdapter<S>> adapters;
    visit_arrays(model.arrays, [&](const std::string& name, MatT<S>& m) {
        if (std::find(names.begin(), names.end(), name) == names.end()) return;
        LoraAdapter<S> a;
        a.down.resize(m.rows(), rank);
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(m.rows()));
        for (Eigen::Index i = 0; i < a.down.rows(); ++i)
            for (Eigen::Index j = 0; j < rank; ++j)
                a.down(i, j) = static_cast<S>(rng.normal(0.0, std_dev));
        a.up = MatT<S>::Zero(rank, m.cols());
        adapters.emplace(name, std::move(a));
    });
    if (adapters.size() != names.size()) throw ModelError("unknown adapter target");
    model.adapters = std::move(adapters);
    model.lora_rank = rank;
    model.lora_alpha = alpha;
    model.refresh_effective();
}

template <class S>
void lora_merge(ModelT<S>& model) {
    if (!model.lora_attached()) throw ModelError("no adapters attached");
    const S scale = static_cast<S>(model.lora_scale());
    visit_arrays(model.arrays, [&](const std::string& name, MatT<S>& m) {
        auto it = model.adapters.find(name);
        if (it != model.adapters.end()) m.noalias() += scale * (it->second.down * it->second.up);
    });
    model.adapters.clear();
    model.lora_rank = 0;
    model.lora_alpha = 0.0;
    model.effective_ = NetArrays<S>{};
}

// Folds raw weight gradients into adapter factors and zeroes the frozen base
// arrays. Call once per batch after the per-item backward passes.
template <class S>
void project_lora_grads(const ModelT<S>& model, GradsT<S>& grads) {
    if (!model.lora_attached()) return;
    const S scale = static_cast<S>(model.lora_scale());
    visit_arrays(grads.arrays, [&](const std::string& name, MatT<S>& dW) {
        auto it = model.adapters.find(name);
        if (it != model.adapters.end()) {
            auto& ga = grads.adapters.at(name);
            ga.down.noalias() += scale * (dW * it->second.up.transpose());
            ga.up.noalias() += scale * (it->second.down.transpose() * dW);
        }
        dW.setZero();
    });
}

// --- inference & scoring ---------------------------------------------------

template <class S>
MatT<S> forward_logprobs(const ModelT<S>& model, std::span<const int> ids) {
    MatT<S> logprobs;
    detail::forward_pass(model, ids, static_cast<detail::FwdCache<S>*>(nullptr), logprobs);
    return logprobs;
}

// Forward score of a completion; the cache can be kept for a later backward
// whose seed coefficient depends on this (and other) forward results.
template <class S>
struct SeqScore {
    detail::FwdCache<S> cache;
    std::size_t completion_start = 0;
    double logp = 0;
    bool has_cache = false;
};

template <class S>
SeqScore<S> score_forward(const ModelT<S>& model, std::span<const int> full_ids,
                          std::size_t completion_start, bool keep_cache) {
    const Eigen::Index T = static_cast<Eigen::Index>(full_ids.size());
    if (completion_start < 1 || completion_start >= full_ids.size())
        throw ModelError("empty completion");

    SeqScore<S> out;
    out.completion_start = completion_start;
    out.has_cache = keep_cache;
    MatT<S> logprobs;
    detail::forward_pass(model, full_ids, keep_cache ? &out.cache : nullptr, logprobs);
    double logp = 0;
    for (Eigen::Index t = static_cast<Eigen::Index>(completion_start); t < T; ++t)
        logp += static_cast<double>(logprobs(t - 1, full_ids[static_cast<std::size_t>(t)]));
    if (!std::isfinite(logp)) throw ModelError("non-finite sequence log-probability");
    out.logp = logp;
    return out;
}

// Accumulates coeff * d(logp of completion)/d(params) into grads.
template <class S>
void score_backward(const ModelT<S>& model, const SeqScore<S>& scored, double coeff,
                    GradsT<S>& grads) {
    if (!scored.has_cache) throw ModelError("score_backward without retained cache");
    if (coeff == 0.0) return;
    const auto& cache = scored.cache;
    const Eigen::Index T = static_cast<Eigen::Index>(cache.ids.size());
    const Eigen::Index row_begin = static_cast<Eigen::Index>(scored.completion_start) - 1;
    const Eigen::Index row_end = T - 1;
    MatT<S> dlogits = MatT<S>::Zero(T, model.config.vocab_size);
    for (Eigen::Index t = row_begin; t < row_end; ++t) {
        for (int j = 0; j < model.config.vocab_size; ++j)
            dlogits(t, j) =
                static_cast<S>(-coeff * std::exp(static_cast<double>(cache.logprobs(t, j))));
        dlogits(t, cache.ids[static_cast<std::size_t>(t + 1)]) += static_cast<S>(coeff);
    }
    detail::backward_pass(model, cache, dlogits, row_begin, row_end, grads);
}

template <class S>
double score_completion(const ModelT<S>& model, std::span<const int> full_ids,
                        std::size_t completion_start, GradsT<S>* grads, double coeff) {
    SeqScore<S> scored = score_forward(model, full_ids, completion_start, grads != nullptr);
    if (grads) score_backward(model, scored, coeff, *grads);
    return scored.logp;
}

template <class S>
double seq_logprob(const ModelT<S>& model, std::span<const int> prompt_ids,
                   std::span<const int> completion_ids) {
    if (completion_ids.empty()) throw ModelError("empty completion");
    std::vector<int> full;
    full.reserve(prompt_ids.size() + completion_ids.size() + 1);
    full.push_back(model.vocab.eos_id());
    full.insert(full.end(), prompt_ids.begin(), prompt_ids.end());
    const std::size_t completion_start = full.size();
    full.insert(full.end(), completion_ids.begin(), completion_ids.end());
    return score_completion(model, full, completion_start, static_cast<GradsT<S>*>(nullptr), 0.0);
}

// --- incremental decoding ---------------------------------------------------

namespace detail {

template <class S>
struct DecodeState {
    std::vector<MatT<S>> key_cache, value_cache;  // per layer, (context, d)
    int t = 0;

    explicit DecodeState(const ModelConfig& cfg)
        : key_cache(static_cast<std::size_t>(cfg.n_layers),
                    MatT<S>(cfg.context_len, cfg.d_model)),
          value_cache(static_cast<std::size_t>(cfg.n_layers),
                      MatT<S>(cfg.context_len, cfg.d_model)) {}
};

template <class S>
Eigen::RowVectorXd decode_step(const ModelT<S>& model, DecodeState<S>& state, int token) {
    const ModelConfig& cfg = model.config;
    const NetArrays<S>& w = model.active();
    const int t = state.t;
    if (t >= cfg.context_len) throw ModelError("sequence exceeds context window");
    const Eigen::Index dh = cfg.d_model / cfg.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    MatT<S> x = w.wte.row(token) + w.wpe.row(t);
    MatT<S> ln(1, cfg.d_model), q, k, v, ctx(1, cfg.d_model);
    Eigen::VectorXd mean, istd;
    for (int li = 0; li < cfg.n_layers; ++li) {
        const auto& l = w.layers[static_cast<std::size_t>(li)];
        layernorm_forward(x, l.ln1_g, l.ln1_b, ln, mean, istd);
        q.noalias() = ln * l.wq;
        k.noalias() = ln * l.wk;
        v.noalias() = ln * l.wv;
        auto& K = state.key_cache[static_cast<std::size_t>(li)];
        auto& V = state.value_cache[static_cast<std::size_t>(li)];
        K.row(t) = k.row(0);
        V.row(t) = v.row(0);
        for (int h = 0; h < cfg.n_heads; ++h) {
            auto qh = q.middleCols(h * dh, dh);
            auto kh = K.block(0, h * dh, t + 1, dh);
            auto vh = V.block(0, h * dh, t + 1, dh);
            Eigen::VectorXd scores = (kh * qh.transpose()).template cast<double>() * inv_sqrt;
            const double maxv = scores.maxCoeff();
            double sum = 0;
            for (Eigen::Index i = 0; i <= t; ++i) {
                scores(i) = std::exp(scores(i) - maxv);
                sum += scores(i);
            }
            scores /= sum;
            ctx.middleCols(h * dh, dh).noalias() =
                (scores.transpose() * vh.template cast<double>()).template cast<S>();
        }
        x.noalias() += ctx * l.wo;
        layernorm_forward(x, l.ln2_g, l.ln2_b, ln, mean, istd);
        MatT<S> h_pre = ln * l.w1;
        for (Eigen::Index j = 0; j < h_pre.cols(); ++j)
            h_pre(0, j) = static_cast<S>(gelu_scalar(static_cast<double>(h_pre(0, j))));
        x.noalias() += h_pre * l.w2;
    }
    layernorm_forward(x, w.lnf_g, w.lnf_b, ln, mean, istd);
    MatT<S> logits = ln * w.w_out;
    logits.row(0) += w.b_out.row(0);
    state.t = t + 1;
    return logits.row(0).template cast<double>();
}

}  // namespace detail

template <class S>
std::string sample(const ModelT<S>& model, std::span<const int> prompt_ids, StopRule stop,
                   int max_new, double temperature, std::uint64_t seed) {
    if (temperature < 0) throw ModelError("temperature must be >= 0");
    const ModelConfig& cfg = model.config;
    if (static_cast<int>(prompt_ids.size()) + 1 > cfg.context_len)
        throw ModelError("sequence exceeds context window");

    detail::DecodeState<S> state(cfg);
    Eigen::RowVectorXd logits = detail::decode_step(model, state, model.vocab.eos_id());
    for (int id : prompt_ids) logits = detail::decode_step(model, state, id);

    const int full_stop_id = model.vocab.encode(".")[0];
    Rng rng(derive_seed(seed, "sample", {prompt_ids.size()}));

    std::vector<int> out;
    const int budget = std::min(max_new, cfg.context_len - 1 - static_cast<int>(prompt_ids.size()));
    for (int n = 0; n < budget; ++n) {
        int next = 0;
        if (temperature == 0.0) {
            Eigen::Index arg = 0;
            logits.maxCoeff(&arg);
            next = static_cast<int>(arg);
        } else {
            Eigen::RowVectorXd z = logits / temperature;
            const double maxv = z.maxCoeff();
            double sum = 0;
            for (Eigen::Index j = 0; j < z.size(); ++j) {
                z(j) = std::exp(z(j) - maxv);
                sum += z(j);
            }
            double r = rng.uniform01() * sum, acc = 0;
            next = static_cast<int>(z.size()) - 1;
            for (Eigen::Index j = 0; j < z.size(); ++j) {
                acc += z(j);
                if (r <= acc) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (stop.at_eos && next == model.vocab.eos_id()) break;
        if (stop.at_newline && next == model.vocab.newline_id()) break;
        out.push_back(next);
        if (stop.at_full_stop && next == full_stop_id) break;
        if (n + 1 < budget) logits = detail::decode_step(model, state, next);
    }
    return model.vocab.decode(out);
}

}  // namespace cotforge
