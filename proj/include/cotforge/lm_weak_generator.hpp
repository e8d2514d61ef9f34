#pragma once

#include "cotforge/forge.hpp"
#include "cotforge/model.hpp"

namespace cotforge {

// WeakGenerator backed by a model checkpoint: feeds the rendered template
// through greedy decoding, stopping at the first line break or full stop.
// Serialized by default; pass shareable=true to allow concurrent calls (the
// snapshot is immutable and decoding at temperature 0 is a pure function).
class LmWeakGenerator : public WeakGenerator {
public:
    explicit LmWeakGenerator(const Model& model, int max_new = 64, bool shareable = false)
        : model_(model), max_new_(max_new), shareable_(shareable) {}

    std::string generate(const std::string& prompt) override {
        std::vector<int> ids = model_.vocab.encode(prompt);
        const int room = model_.config.context_len - 1 - max_new_;
        if (static_cast<int>(ids.size()) > room && room > 0)
            ids.erase(ids.begin(), ids.end() - room);  // keep the template tail
        return sample(model_, ids, StopRule::sentence(), max_new_, 0.0, 0);
    }

    bool safely_shareable() const override { return shareable_; }

private:
    const Model& model_;
    int max_new_;
    bool shareable_;
};

}  // namespace cotforge
