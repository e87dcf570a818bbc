// Walks the bundled demo project through the engine: preference rates,
// category bands, an axis brush, and the probe pair.

#include "biaslens/biaslens.hpp"

#include <cstdio>
#include <iostream>

using namespace biaslens;

int main() {
    const Project p = demo::project();
    std::printf("%zu sentences, %zu pairs, models:", p.corpus.size(), p.corpus.pairs().size());
    for (const auto& m : p.scores.model_ids()) std::printf(" %s", m.c_str());
    std::printf("\n\n");

    for (const auto& m : p.scores.model_ids()) {
        const auto r = stereotype_preference_rate(p.scores, p.corpus, m);
        std::printf("%-8s preference rate %.3f over %zu pairs\n", m.c_str(), r.overall.preference_rate, r.overall.n_pairs);
    }

    std::printf("\ndisability bands (median [q1, q3]):\n");
    for (const auto& b : category_bands(p.scores, p.corpus, {"disability"}, true).bands) {
        std::printf("  %-8s %-10s %.2f [%.2f, %.2f] n=%zu\n", b.model_id.c_str(), std::string(to_string(*b.group)).c_str(), b.median,
                    b.q1, b.q3, b.n);
    }

    // Brushing [-5, -4] on the albert axis.
    const auto sel = apply_filters(p, p.filters);
    std::printf("\nalbert in [-5, -4]: %zu sentences\n", sel.ids.size());
    for (const auto& id : sel.ids) {
        if (const auto* r = p.corpus.find(id)) std::printf("  %-8s %s\n", id.c_str(), r->text.c_str());
    }

    std::printf("\nprobes:\n");
    for (const auto& probe : p.probes) {
        std::printf("  %s  roberta %.1f  %s\n", probe.id.c_str(), *probe.pll("roberta"), probe.text.c_str());
    }

    const auto* e = p.active_embedding();
    std::printf("\nactive embedding: %s, %zu points\n", std::string(to_string(e->method)).c_str(), e->points.size());
    return 0;
}
