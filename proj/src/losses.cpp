#include "cotforge/losses.hpp"

namespace cotforge {

double log_sigmoid(double x) {
    // -softplus(-x), stable on both tails
    if (x >= 0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double dpo_item(const PrefLogps& lp, double beta, PrefItemGrad* grad) {
    const double h = (lp.policy_chosen - lp.ref_chosen) - (lp.policy_rejected - lp.ref_rejected);
    const double loss = -log_sigmoid(beta * h);
    if (grad) {
        const double s = sigmoid(-beta * h);
        grad->d_chosen = -beta * s;
        grad->d_rejected = beta * s;
    }
    return loss;
}

double ipo_item(const PrefLogps& lp, double beta, PrefItemGrad* grad) {
    const double h = (lp.policy_chosen - lp.ref_chosen) - (lp.policy_rejected - lp.ref_rejected);
    const double target = 1.0 / (2.0 * beta);
    const double diff = h - target;
    if (grad) {
        grad->d_chosen = 2.0 * diff;
        grad->d_rejected = -2.0 * diff;
    }
    return diff * diff;
}

double kto_chosen_item(double reward, double beta, double z0, double* d_reward) {
    const double x = beta * (reward - z0);
    if (d_reward) {
        const double s = sigmoid(x);
        *d_reward = -beta * s * (1.0 - s);
    }
    return 1.0 - sigmoid(x);
}

double kto_rejected_item(double reward, double beta, double z0, double* d_reward) {
    const double x = beta * (z0 - reward);
    if (d_reward) {
        const double s = sigmoid(x);
        *d_reward = beta * s * (1.0 - s);
    }
    return 1.0 - sigmoid(x);
}

double orpo_item(double norm_logp_chosen, double norm_logp_rejected, double lambda,
                 double* d_chosen, double* d_rejected) {
    if (norm_logp_chosen >= 0.0 || norm_logp_rejected >= 0.0)
        throw ModelError("normalized log-probability >= 0");
    // logit(y) = logp - log(1 - exp(logp)); keep the argument away from 0
    constexpr double kFloor = -1e-9;
    const double pw = std::min(norm_logp_chosen, kFloor);
    const double pl = std::min(norm_logp_rejected, kFloor);
    auto logit = [](double p) { return p - std::log(-std::expm1(p)); };
    const double log_or = logit(pw) - logit(pl);
    const double loss = -norm_logp_chosen + lambda * (-log_sigmoid(log_or));
    if (d_chosen) {
        const double s = sigmoid(-log_or);
        // d logit / d logp = 1 / (1 - exp(logp))
        *d_chosen = -1.0 + lambda * (-s) / (-std::expm1(pw));
        *d_rejected = lambda * s / (-std::expm1(pl));
    }
    return loss;
}

EncodedSeq encode_pair(const Vocab& vocab, const std::string& prompt,
                       const std::string& completion, bool append_eos) {
    EncodedSeq out;
    out.ids.push_back(vocab.eos_id());
    if (!prompt.empty()) {
        const auto p = vocab.encode(prompt + " ");
        out.ids.insert(out.ids.end(), p.begin(), p.end());
    }
    out.completion_start = out.ids.size();
    const auto c = vocab.encode(completion);
    out.ids.insert(out.ids.end(), c.begin(), c.end());
    if (append_eos) out.ids.push_back(vocab.eos_id());
    if (out.completion_start == out.ids.size()) throw ModelError("empty completion");
    return out;
}

}  // namespace cotforge
