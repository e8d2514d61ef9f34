#include "cotforge/gradcheck.hpp"

#include <functional>

namespace cotforge {

namespace {

using DModel = ModelT<double>;
using DGrads = GradsT<double>;

struct Fixture {
    DModel policy;
    DModel ref;
    std::vector<SftItem> sft_batch;
    std::vector<PrefItem> pref_batch;
};

Fixture make_fixture(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.context_len = 64;

    Fixture f{init_model<double>(cfg, Vocab::standard(), derive_seed(seed, "policy", {})),
              init_model<double>(cfg, Vocab::standard(), derive_seed(seed, "ref", {})),
              {},
              {}};

    const Vocab& vocab = f.policy.vocab;
    const std::vector<std::array<std::string, 3>> rows = {
        {"Start with 4. Then add 3.", "4 + 3 = 7.", "4 + 3 = 9."},
        {"Start with 12.", "The solution is 12.", "The solution is 17."},
        {"9 - 2 = 7.", "7 * 2 = 14.", "7 * 2 = 11."},
        {"Then add 5.", "5 + 5 = 10.", "5 + 5 = 40."},
    };
    for (const auto& [prompt, chosen, rejected] : rows) {
        f.sft_batch.push_back({encode_pair(vocab, prompt, chosen, true)});
        f.pref_batch.push_back({encode_pair(vocab, prompt, chosen, true),
                                encode_pair(vocab, prompt, rejected, true)});
    }
    return f;
}

double eval_loss(Objective objective, const Fixture& f, const DModel& policy, DGrads* grads) {
    switch (objective) {
        case Objective::sft:
            return loss_sft<double>(policy, f.sft_batch, grads);
        case Objective::dpo:
            return loss_dpo<double>(policy, f.ref, f.pref_batch, 0.3, grads);
        case Objective::ipo:
            return loss_ipo<double>(policy, f.ref, f.pref_batch, 0.3, grads);
        case Objective::kto:
            // z0 fixed at zero so the detached reference point cannot leak
            // into the finite-difference estimate.
            return loss_kto<double>(policy, f.ref, f.pref_batch, 0.3, KtoReference::zero, grads);
        case Objective::orpo:
            return loss_orpo<double>(policy, f.pref_batch, 0.05, grads);
    }
    throw ModelError("unknown objective");
}

}  // namespace

GradCheckResult gradcheck_objective(Objective objective, double fd_step, int coords,
                                    std::uint64_t seed, bool inject_sign_bug) {
    Fixture f = make_fixture(derive_seed(seed, "gradcheck-fixture", {}));

    DGrads grads = make_grads(f.policy);
    grads.zero();
    eval_loss(objective, f, f.policy, &grads);

    // Flatten (group, row, col, analytic) across arrays.
    struct Coord {
        std::string group;
        Eigen::Index r, c;
        double analytic;
    };
    std::vector<Coord> eligible;
    double max_abs = 0;
    visit_arrays(grads.arrays, [&](const std::string&, MatT<double>& g) {
        if (g.size() > 0) max_abs = std::max(max_abs, g.cwiseAbs().maxCoeff());
    });
    const double floor = 1e-3 * max_abs;
    visit_arrays(grads.arrays, [&](const std::string& name, MatT<double>& g) {
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            for (Eigen::Index c = 0; c < g.cols(); ++c)
                if (std::abs(g(r, c)) >= floor) eligible.push_back({name, r, c, g(r, c)});
    });
    if (eligible.empty()) throw ModelError("no eligible gradient coordinates");

    Rng rng(derive_seed(seed, "gradcheck-coords", {static_cast<std::uint64_t>(coords)}));
    std::vector<std::size_t> picks;
    for (int i = 0; i < coords; ++i)
        picks.push_back(static_cast<std::size_t>(rng.below(eligible.size())));

    std::vector<std::pair<std::string, MatT<double>*>> arrays;
    visit_arrays(f.policy.arrays, [&](const std::string& name, MatT<double>& m) {
        arrays.emplace_back(name, &m);
    });

    GradCheckResult result;
    result.coords_checked = coords;
    bool first = true;
    for (std::size_t pi = 0; pi < picks.size(); ++pi) {
        const Coord& coord = eligible[picks[pi]];
        MatT<double>* mat = nullptr;
        for (auto& [name, m] : arrays)
            if (name == coord.group) mat = m;
        const double saved = (*mat)(coord.r, coord.c);

        (*mat)(coord.r, coord.c) = saved + fd_step;
        const double up = eval_loss(objective, f, f.policy, nullptr);
        (*mat)(coord.r, coord.c) = saved - fd_step;
        const double down = eval_loss(objective, f, f.policy, nullptr);
        (*mat)(coord.r, coord.c) = saved;

        const double fd = (up - down) / (2.0 * fd_step);
        double analytic = coord.analytic;
        if (inject_sign_bug && first) {
            analytic = -analytic;
            first = false;
        }
        const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
        auto& group_err = result.per_group[coord.group];
        group_err = std::max(group_err, rel);
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_group = coord.group;
        }
    }
    return result;
}

}  // namespace cotforge
