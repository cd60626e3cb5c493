// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
// Usage: wise_acceptance [--work-dir DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wise/checkpoint.hpp"
#include "wise/errors.hpp"
#include "wise/harness.hpp"

using namespace wise;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

fs::path g_work;

// ---------------------------------------------------------------------------
// Shared fixtures

// Desk-scale configuration for the end-to-end runs. Prefix augmentation is off
// and the routing terms are down-weighted; both were fixed on the seed-0
// calibration run before seeds 1 and 2 were looked at.
ExperimentConfig stream_config(std::uint64_t seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.data.seed = seed;
    c.pretrain.seed = seed;
    c.pretrain.steps = 3000;
    c.pretrain.lr = 0.3;
    c.pretrain.batch_size = 8;
    c.pretrained_ckpt = (g_work / "pre_{seed}.ckpt").string();
    c.edit.n_prefixes = 0;
    c.edit.margin_weight = 0.03;
    c.checkpoints = {100};
    c.record_wall_time = false;
    return c;
}

Tokens random_text(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<int> letter(0, 26);
    Tokens t(len(rng));
    for (auto& c : t) {
        const int l = letter(rng);
        c = l == 26 ? ' ' : 'a' + l;
    }
    return t;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

// Hash of the values outside the mask support.
std::uint64_t complement_hash(const Matrix& values, const Mask& mask) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i] == 0.0) {
            const double v = values[i];
            h = fnv1a(&i, sizeof i, h);
            h = fnv1a(&v, sizeof v, h);
        }
    }
    return h;
}

// Independent routing activation: mean over rows of ||a_t (W' - W)||.
double oracle_activation(const Matrix& main, const Matrix& side, const Matrix& act) {
    double total = 0.0;
    for (std::size_t t = 0; t < act.rows(); ++t) {
        double sq = 0.0;
        for (std::size_t j = 0; j < main.cols(); ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < main.rows(); ++i) s += act(t, i) * (side(i, j) - main(i, j));
            sq += s * s;
        }
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(act.rows());
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

Outcome gradient_oracle() {
    double worst = 0.0;
    std::size_t probes = 0;
    const std::size_t instances = 5;
    for (std::uint64_t s = 0; s < instances; ++s) {
        ModelConfig mc;
        mc.d_model = 32;
        mc.d_ffn = 64;
        mc.n_layers = 3;
        mc.n_heads = 4;
        mc.edit_layer = 1;
        const TinyTransformer m = init_model(mc, 100 + s);
        std::mt19937_64 rng(200 + s);
        const EditExample ex{random_text(rng, 6, 14), random_text(rng, 2, 5), std::nullopt,
                             random_text(rng, 5, 10)};
        std::vector<Tokens> irr;
        for (int i = 0; i < 4; ++i) irr.push_back(random_text(rng, 5, 20));
        // Random side memory near the main one.
        Matrix w = m.edit_values();
        std::normal_distribution<double> n(0.0, 0.05);
        for (auto& v : w.flat()) v += n(rng);
        const EditConfig cfg;
        const EditLoss l = edit_loss(m, w, ex, irr, cfg);
        auto f = [&](const Matrix& x) { return edit_loss(m, x, ex, irr, cfg).loss; };
        const GradCheckReport r = finite_diff_check(f, w, l.grad, 60, 300 + s, 1e-5);
        worst = std::max(worst, r.max_rel_error);
        probes += r.num_probes;
    }
    return {worst < 1e-4, std::to_string(instances) + " instances, " + std::to_string(probes) +
                              " coordinates, max rel error " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// 2. Mask overlap statistics

Outcome overlap_statistics() {
    struct Case {
        double rho;
        std::size_t k;
    };
    const std::vector<Case> cases{{0.2, 2}, {0.2, 3}, {0.5, 2}};
    const std::size_t seeds = 200;
    bool pass = true;
    std::ostringstream detail;
    for (const auto& c : cases) {
        std::vector<double> pair, all;
        for (std::size_t s = 0; s < seeds; ++s) {
            const auto masks = gen_masks(100, 100, c.k, c.rho, 1000 + s);
            std::size_t p = 0, a = 0;
            for (std::size_t i = 0; i < masks[0].size(); ++i) {
                if (masks[0][i] != 0.0 && masks[1][i] != 0.0) ++p;
                bool every = true;
                for (const auto& m : masks) every = every && m[i] != 0.0;
                if (every) ++a;
            }
            pair.push_back(static_cast<double>(p) / 1e4);
            all.push_back(static_cast<double>(a) / 1e4);
        }
        auto within = [&](const std::vector<double>& xs, double expect, double& z) {
            double mean = 0.0, var = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            for (double x : xs) var += (x - mean) * (x - mean);
            const double se = std::sqrt(var / static_cast<double>(xs.size() - 1)) /
                              std::sqrt(static_cast<double>(xs.size()));
            z = std::abs(mean - expect) / se;
            return z <= 3.0;
        };
        double zp = 0.0, za = 0.0;
        pass = within(pair, c.rho * c.rho, zp) && pass;
        pass = within(all, std::pow(c.rho, static_cast<double>(c.k)), za) && pass;
        detail << "(rho " << c.rho << ", k " << c.k << ") z pair " << fmt(zp, 3) << " z all " << fmt(za, 3)
               << "; ";
    }
    return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Routing exactness

Outcome routing_exactness() {
    const TinyTransformer m = init_model(ModelConfig{}, 21);
    const Matrix& main = m.edit_values();
    std::mt19937_64 rng(22);
    std::normal_distribution<double> n(0.0, 0.05);
    std::vector<SideMemory> mems;
    for (std::uint64_t j = 0; j < 2; ++j) {
        SideMemory s = init_side(main, 2, 0.2, 30 + j);
        for (std::size_t i = 0; i < main.size(); ++i) {
            if (s.masks[0][i] != 0.0) s.values[i] += n(rng);
        }
        mems.push_back(std::move(s));
    }
    std::vector<Tokens> queries;
    for (int q = 0; q < 1000; ++q) queries.push_back(random_text(rng, 2, 24));

    // Thresholds at each memory's median activation, so about half the
    // queries route somewhere.
    std::vector<std::vector<double>> acts(mems.size());
    std::vector<Matrix> rows;
    for (const auto& q : queries) rows.push_back(edit_layer_activation(m, q));
    for (std::size_t j = 0; j < mems.size(); ++j) {
        for (const auto& a : rows) acts[j].push_back(oracle_activation(main, mems[j].values, a));
        std::vector<double> sorted = acts[j];
        std::nth_element(sorted.begin(), sorted.begin() + 500, sorted.end());
        mems[j].epsilon = sorted[500];
    }

    const ValueRouter router = make_router(m, mems);
    std::size_t routed = 0, mismatches = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < mems.size(); ++j) {
            if (acts[j][q] > acts[best][q]) best = j;
        }
        const Matrix* expect = acts[best][q] > mems[best].epsilon ? &mems[best].values : nullptr;
        routed += expect != nullptr;
        const Matrix* got = router(queries[q]);
        const Matrix& ref_values = expect ? *expect : main;
        const Matrix routed_logits = forward(m, queries[q], got).logits;
        const Matrix ref_logits = forward(m, queries[q], &ref_values).logits;
        const Tokens routed_out = greedy_decode(m, queries[q], 4, router);
        const Tokens ref_out = greedy_decode_with(m, queries[q], 4, expect);
        if (got != expect || !routed_logits.bit_equal(ref_logits) || routed_out != ref_out) ++mismatches;
    }
    const bool mixed = routed > 0 && routed < queries.size();
    return {mismatches == 0 && mixed, std::to_string(queries.size()) + " queries, " + std::to_string(routed) +
                                          " routed, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 4. Pre-edit transparency

Outcome pre_edit_transparency() {
    const TinyTransformer m = init_model(ModelConfig{}, 41);
    const std::vector<SideMemory> fresh{init_side(m.edit_values(), 2, 0.2, 42),
                                        init_side(m.edit_values(), 3, 0.5, 43)};
    const ValueRouter router = make_router(m, fresh);
    std::mt19937_64 rng(44);
    std::size_t mismatches = 0;
    for (int q = 0; q < 1000; ++q) {
        const Tokens x = random_text(rng, 1, 30);
        const bool same_logits = forward(m, x, router(x)).logits.bit_equal(forward(m, x).logits);
        const bool same_out = greedy_decode(m, x, 3, router) == greedy_decode(m, x, 3);
        if (!same_logits || !same_out) ++mismatches;
    }
    DataConfig d;
    d.n_facts = 50;
    const MetricsReport r = evaluate(m, fresh, gen_dataset(d).stream.examples);
    return {mismatches == 0 && r.loc == 1.0,
            "1000 inputs, " + std::to_string(mismatches) + " mismatches, Loc " + fmt(r.loc, 17)};
}

// ---------------------------------------------------------------------------
// 5. Margin zero set after one edit

Outcome margin_zero_set() {
    const ExperimentConfig cfg = stream_config(0);
    const Dataset data = experiment_dataset(cfg);
    const TinyTransformer m = pretrained_model(cfg, data);
    // Paper defaults throughout: alpha 5, beta 20, gamma 10, prefixes on.
    const EditConfig ec;
    Editor ed(m, ec, MergeSpec{}, EditMode::Merge, encode_lines(data.irrelevant), 0);
    const EditExample& ex = data.stream.examples.front();
    const EditLogEntry e = ed.edit_one(ex);

    const double d_edit = ed.activation_of(ex.prompt, 0);
    double max_held = 0.0, mean_held = 0.0;
    const std::size_t n = std::min<std::size_t>(100, data.heldout.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double d = ed.activation_of(encode_bytes(data.heldout[i]), 0);
        max_held = std::max(max_held, d);
        mean_held += d / static_cast<double>(n);
    }
    // The held-out bound applies to the mean; the separation uses the worst
    // held-out query, so it is the binding check for the tail.
    const double sep = d_edit - max_held;
    const bool pass = n == 100 && d_edit >= 19.0 && mean_held <= 6.0 && sep >= 8.0;
    return {pass, "delta(x_e) " + fmt(d_edit) + ", held-out max " + fmt(max_held) + " mean " + fmt(mean_held) +
                      ", separation " + fmt(sep) + ", final margin " + fmt(e.margin)};
}

// ---------------------------------------------------------------------------
// 6. Subspace freezing

Outcome subspace_freezing() {
    const ExperimentConfig cfg = stream_config(0);
    const Dataset data = experiment_dataset(cfg);
    const TinyTransformer m = pretrained_model(cfg, data);
    EditConfig ec;
    ec.edits_per_shard = 1;  // rotate shards and merge within a few edits
    Editor ed(m, ec, MergeSpec{}, EditMode::Merge, encode_lines(data.irrelevant), 5);
    std::uint64_t reference = 0;
    std::size_t hashed = 0, violations = 0;
    ed.set_step_observer([&](std::size_t step, const Matrix& before, const Matrix& after, const Mask& mask) {
        if (step == 0) reference = complement_hash(before, mask);
        if (step % 10 == 0 || step + 1 == ec.steps_per_edit) {
            ++hashed;
            if (complement_hash(after, mask) != reference) ++violations;
        }
    });
    ed.run({data.stream.examples.begin(), data.stream.examples.begin() + 5});
    return {violations == 0 && hashed > 0, std::to_string(hashed) + " hashes over 5 edits, " +
                                               std::to_string(ed.merge_events().size()) + " merges, " +
                                               std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------
// 7. Ties hand oracle

Outcome ties_hand_oracle() {
    std::vector<std::string> failed;
    auto expect = [&](const std::string& name, const Matrix& got, const Matrix& want) {
        if (!(got == want)) failed.push_back(name);
    };
    expect("ties [2,0,-3],[0,4,1]", ties_merge_vector({Matrix{{2, 0, -3}}, Matrix{{0, 4, 1}}}, 1.0),
           Matrix{{2, 4, -3}});
    expect("ties keep 0.5", ties_merge_vector({Matrix{{1, -1}}, Matrix{{3, 1}}}, 0.5), Matrix{{2, 0}});
    expect("linear halves", linear_merge_vector({Matrix{{2, 0}}, Matrix{{0, 4}}}, {0.5, 0.5}), Matrix{{1, 2}});
    expect("linear cancels", linear_merge_vector({Matrix{{1.5, -2}}, Matrix{{-1.5, 2}}}, {0.5, 0.5}),
           Matrix{{0, 0}});
    expect("conflict ties", ties_merge_vector({Matrix{{3, 1}}, Matrix{{-1, 1}}}, 1.0), Matrix{{3, 1}});
    expect("conflict linear", linear_merge_vector({Matrix{{3, 1}}, Matrix{{-1, 1}}}, {0.5, 0.5}),
           Matrix{{1, 1}});
    TaskVectorSet tv{Matrix{{0, 0, 0}}, {Matrix{{2, 0, -3}}, Matrix{{0, 4, 1}}}};
    MergeSpec sign;
    sign.strategy = MergeStrategy::Sign;
    expect("sign [2,0,-3],[0,4,1]", sign_merge(tv, sign), Matrix{{2, 4, -3}});

    // Disjoint supports: each shard's values survive unchanged.
    std::mt19937_64 rng(71);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t rows = 20, cols = 30, k = 3;
    std::vector<std::size_t> owner(rows * cols);
    for (auto& o : owner) o = std::uniform_int_distribution<std::size_t>(0, k)(rng);  // k = nobody
    std::vector<Matrix> taus(k, Matrix(rows, cols));
    for (std::size_t i = 0; i < owner.size(); ++i) {
        if (owner[i] < k) taus[owner[i]][i] = n(rng);
    }
    Matrix base(rows, cols);
    for (auto& v : base.flat()) v = n(rng);
    const Matrix merged_tau = ties_merge_vector(taus, 1.0);
    const Matrix merged = ties_merge(TaskVectorSet{base, taus}, MergeSpec{});
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < owner.size(); ++i) {
        const double want = owner[i] < k ? taus[owner[i]][i] : 0.0;
        if (merged_tau[i] != want || merged[i] != base[i] + want) ++wrong;
    }
    if (wrong) failed.push_back("disjoint support (" + std::to_string(wrong) + " coordinates)");

    std::string detail = "7 hand examples and a 3-shard disjoint merge";
    for (const auto& f : failed) detail += "; failed " + f;
    return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------
// 8. End-to-end stream

Outcome end_to_end_stream() {
    bool pass = true;
    std::ostringstream detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ExperimentConfig c = stream_config(seed);
        c.run_baseline = true;
        c.out_dir = (g_work / ("stream_seed" + std::to_string(seed))).string();
        const ExperimentResult ties = run_experiment(c);
        ExperimentConfig lc = stream_config(seed);
        lc.merge.strategy = MergeStrategy::Linear;
        const ExperimentResult linear = run_experiment(lc);

        const MetricsReport& w = ties.reports.back();
        const MetricsReport& ft = ties.baseline_reports.back();
        const MetricsReport& lin = linear.reports.back();
        const bool a = w.loc >= ft.loc + 0.2;
        const bool b = w.rel >= 0.8 && w.gen >= 0.6;
        const bool cc = w.rel >= lin.rel;
        pass = pass && a && b && cc;
        detail << "seed " << seed << (seed == 0 ? " (calibration)" : "") << ": rel " << fmt(w.rel, 3)
               << " gen " << fmt(w.gen, 3) << " loc " << fmt(w.loc, 3) << " | ft loc " << fmt(ft.loc, 3)
               << " | linear rel " << fmt(lin.rel, 3) << " [a " << (a ? "ok" : "no") << ", b "
               << (b ? "ok" : "no") << ", c " << (cc ? "ok" : "no") << "]; ";
    }
    return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 9. Inference latency

double mean_latency(const TinyTransformer& m, const std::vector<SideMemory>& mems,
                    const std::vector<EditExample>& queries) {
    const ValueRouter router = make_router(m, mems);
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& q : queries) {
            const Tokens out = greedy_decode(m, q.prompt, q.target.size(), router);
            if (out.empty()) throw InputError("latency: empty decode");
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        best = std::min(best, s / static_cast<double>(queries.size()));
    }
    return best;
}

Outcome inference_latency() {
    const TinyTransformer m = init_model(ModelConfig{}, 91);
    DataConfig d;
    d.n_facts = 500;
    d.n_background = 100;
    d.n_heldout = 20;
    const Dataset data = gen_dataset(d);
    const auto& stream = data.stream.examples;
    // Latency depends on how many memories there are, not on what they hold,
    // so a single step per edit is enough to build them.
    EditConfig ec;
    ec.steps_per_edit = 1;
    ec.n_prefixes = 0;
    const auto pool = encode_lines(data.irrelevant);
    const std::vector<EditExample> one(stream.begin(), stream.begin() + 1);
    const std::vector<EditExample> queries(stream.begin(), stream.begin() + 200);

    const StreamResult m1 = run_stream(m, one, ec, MergeSpec{}, EditMode::Merge, pool, 1);
    const StreamResult m500 = run_stream(m, stream, ec, MergeSpec{}, EditMode::Merge, pool, 1);
    const double l1 = mean_latency(m, m1.memories, queries);
    const double l500 = mean_latency(m, m500.memories, queries);
    const bool merge_ok = m500.memories.size() == 1 && l500 <= 1.15 * l1;

    const StreamResult r500 = run_stream(m, stream, ec, MergeSpec{}, EditMode::Retrieve, pool, 1);
    const std::size_t n_mem = r500.memories.size();
    std::vector<double> lat;
    bool linear_ok = n_mem > 1;
    for (std::size_t j = 1; j <= n_mem; ++j) {
        const std::vector<SideMemory> subset(r500.memories.begin(), r500.memories.begin() + j);
        lat.push_back(mean_latency(m, subset, queries));
        linear_ok = linear_ok && lat.back() <= 1.15 * static_cast<double>(j) * lat.front();
    }
    std::ostringstream detail;
    detail << "merge T=1 " << fmt(l1 * 1e3) << " ms, T=500 " << fmt(l500 * 1e3) << " ms (ratio "
           << fmt(l500 / l1, 3) << "); retrieve " << n_mem << " memories: 1 -> " << fmt(lat.front() * 1e3)
           << " ms, " << n_mem << " -> " << fmt(lat.back() * 1e3) << " ms";
    return {merge_ok && linear_ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 10. rho/k sweep

Outcome rho_k_sweep() {
    ExperimentConfig base = stream_config(0);
    base.out_dir.clear();
    const SweepGrid grid;  // rho {0.05, 0.1, 0.2, 0.5, 1}, k {2, 3}, seeds {0, 1, 2}
    const SweepResult s = run_sweep(base, grid);
    write_sweep(s, (g_work / "sweep.csv").string());
    const bool pass = static_cast<double>(s.best_k) * s.best_rho <= 1.0 + 1e-12;
    return {pass, "best rho " + fmt(s.best_rho) + " k " + std::to_string(s.best_k) + " (k*rho " +
                      fmt(static_cast<double>(s.best_k) * s.best_rho) + ", mean avg " + fmt(s.best_avg, 3) +
                      "); grid in sweep.csv"};
}

// ---------------------------------------------------------------------------
// 11. Determinism

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[e.path().filename().string()] = ss.str();
    }
    return out;
}

Outcome determinism() {
    ExperimentConfig c;
    c.seed = 4;
    c.model.d_model = 32;
    c.model.d_ffn = 64;
    c.model.n_layers = 2;
    c.model.n_heads = 2;
    c.model.edit_layer = 1;
    c.pretrain.steps = 100;
    c.data.seed = 4;
    c.data.n_facts = 12;
    c.data.n_background = 20;
    c.data.n_heldout = 5;
    c.data.n_filler = 40;
    c.data.n_heldout_filler = 10;
    c.edit.steps_per_edit = 5;
    c.edit.edits_per_shard = 3;
    c.edit.n_prefixes = 2;
    c.checkpoints = {1, 6, 12};
    c.run_baseline = true;
    c.baseline.steps = 5;
    c.record_wall_time = false;
    c.out_dir = (g_work / "determinism").string();
    fs::remove_all(c.out_dir);
    run_experiment(c);
    const auto first = snapshot(c.out_dir);
    fs::remove_all(c.out_dir);
    run_experiment(c);
    const auto second = snapshot(c.out_dir);
    std::size_t differing = 0;
    for (const auto& [name, bytes] : first) {
        const auto it = second.find(name);
        if (it == second.end() || it->second != bytes) ++differing;
    }
    const bool has_ckpt = first.count("final.ckpt") == 1 && first.count("report.csv") == 1;
    return {differing == 0 && first.size() == second.size() && has_ckpt,
            std::to_string(first.size()) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
    g_work = fs::temp_directory_path() / "wise_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            g_work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
        } else {
            std::cerr << "error: unknown argument '" << a << "' (usage: wise_acceptance [--work-dir DIR] [--only N,...])\n";
            return 2;
        }
    }
    fs::create_directories(g_work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"mask overlap statistics", overlap_statistics},
        {"routing exactness", routing_exactness},
        {"pre-edit transparency", pre_edit_transparency},
        {"margin zero set", margin_zero_set},
        {"subspace freezing", subspace_freezing},
        {"ties hand oracle", ties_hand_oracle},
        {"end-to-end stream T=100", end_to_end_stream},
        {"merge/retrieve latency", inference_latency},
        {"rho/k sweep", rho_k_sweep},
        {"determinism", determinism},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first
                  << ": " << o.detail << " (" << fmt(secs, 3) << " s)" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
