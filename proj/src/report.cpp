#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace wise {

namespace {

std::ofstream open_out(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

void check_written(const std::ofstream& out, const std::string& path) {
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_report(const std::vector<MetricsReport>& reports, const std::string& csv_path) {
    if (reports.empty()) throw InputError("report: no metrics to write");
    {
        auto out = open_out(csv_path);
        out << "T,rel,gen,loc,avg,ppl_loc,wall_time\n";
        for (const auto& r : reports) {
            out << r.t_edits << ',' << format_number(r.rel) << ',' << format_number(r.gen) << ','
                << format_number(r.loc) << ',' << format_number(r.avg) << ',' << format_number(r.ppl_loc)
                << ',' << format_number(r.wall_time) << '\n';
        }
        check_written(out, csv_path);
    }
    const std::string txt_path = std::filesystem::path(csv_path).replace_extension(".txt").string();
    auto out = open_out(txt_path);
    for (const auto& r : reports) {
        out << (r.label.empty() ? "run" : r.label) << " T=" << r.t_edits << ": Rel " << format_number(r.rel)
            << "  Gen " << format_number(r.gen) << " (" << r.n_paraphrases << " paraphrases)  Loc "
            << format_number(r.loc) << "  Avg " << format_number(r.avg) << "  PPL(loc) "
            << format_number(r.ppl_loc) << "  token Rel " << format_number(r.rel_tokens) << "  token Gen "
            << format_number(r.gen_tokens) << '\n';
    }
    check_written(out, txt_path);
}

void write_histogram(const std::vector<HistogramRow>& rows, const std::string& path) {
    auto out = open_out(path);
    out << "query_kind,delta_act\n";
    for (const auto& r : rows) out << r.kind << ',' << format_number(r.delta) << '\n';
    check_written(out, path);
}

void write_edit_log(const std::vector<EditLogEntry>& log, const std::vector<MergeEvent>& events,
                    const std::string& path) {
    std::map<std::size_t, const MergeEvent*> by_edit;
    for (const auto& e : events) by_edit[e.after_edit] = &e;
    auto out = open_out(path);
    for (const auto& e : log) {
        nlohmann::ordered_json rec;
        rec["edit"] = e.edit_index;
        rec["memory"] = e.memory;
        rec["shard"] = e.shard;
        rec["steps"] = e.steps;
        rec["ar_loss"] = e.ar_loss;
        rec["margin_loss"] = e.margin;
        rec["delta_edit"] = e.delta_edit;
        rec["epsilon"] = e.epsilon;
        if (auto it = by_edit.find(e.edit_index); it != by_edit.end()) {
            const MergeEvent& m = *it->second;
            rec["merge"] = {{"strategy", to_string(m.strategy)},
                            {"shards", m.shards},
                            {"overlap", m.overlap},
                            {"conflicts", m.conflicts}};
        }
        out << rec.dump() << '\n';
    }
    check_written(out, path);
}

void write_sweep(const SweepResult& sweep, const std::string& csv_path) {
    {
        auto out = open_out(csv_path);
        out << "rho,k,seed,rel,gen,loc,avg\n";
        for (const auto& c : sweep.cells) {
            out << format_number(c.rho) << ',' << c.k << ',' << c.seed << ',' << format_number(c.report.rel) << ','
                << format_number(c.report.gen) << ',' << format_number(c.report.loc) << ','
                << format_number(c.report.avg) << '\n';
        }
        check_written(out, csv_path);
    }
    const std::string txt_path = std::filesystem::path(csv_path).replace_extension(".txt").string();
    auto out = open_out(txt_path);
    out << "best cell: rho=" << format_number(sweep.best_rho) << " k=" << sweep.best_k
        << " mean avg=" << format_number(sweep.best_avg)
        << " k*rho=" << format_number(sweep.best_rho * static_cast<double>(sweep.best_k)) << '\n';
    check_written(out, txt_path);
}

}  // namespace wise
