#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace wise {

namespace {

struct Relation {
    const char* prompt;      // "{}" marks the subject
    const char* paraphrase;
    std::vector<std::string> objects;
};

const std::vector<Relation>& relations() {
    // Objects of one relation start with distinct letters, so the first
    // target byte already identifies the answer. The object follows the
    // subject directly: the byte after the subject decides the answer, and
    // that position carries far more subject information than a shared
    // suffix such as " is" would.
    static const std::vector<Relation> rels{
        {"the city of {}", "the home town of {}",
         {"paris", "lima", "oslo", "rome", "cairo", "delhi", "tokyo", "quito"}},
        {"the job of {}", "the profession of {}",
         {"baker", "nurse", "pilot", "judge", "miner", "tutor", "clerk", "smith"}},
        {"the pet of {}", "the animal owned by {}",
         {"cat", "dog", "owl", "fox", "hen", "eel", "yak", "bat"}},
        {"the color of {}", "the favorite color of {}",
         {"red", "blue", "pink", "gold", "white", "teal", "jade", "navy"}},
    };
    return rels;
}

std::string render(const char* tmpl, const std::string& subject) {
    std::string out(tmpl);
    const auto pos = out.find("{}");
    out.replace(pos, 2, subject);
    return out;
}

struct Fact {
    std::string subject;
    std::size_t relation = 0;
    std::size_t object = 0;
};

std::string make_subject(std::mt19937_64& rng) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1);
    std::uniform_int_distribution<std::size_t> v(0, vowels.size() - 1);
    std::string s;
    for (int i = 0; i < 5; ++i) s.push_back(i % 2 == 0 ? consonants[c(rng)] : vowels[v(rng)]);
    return s;
}

std::vector<std::string> fact_lines(const Fact& f) {
    const Relation& r = relations()[f.relation];
    const std::string& obj = r.objects[f.object];
    return {render(r.prompt, f.subject) + " " + obj, render(r.paraphrase, f.subject) + " " + obj};
}

// Filler text from a small grammar. Its words avoid the fact templates, so it
// plays the role of generic text next to the fact sentences.
std::string make_filler(std::mt19937_64& rng) {
    static const std::vector<std::string> det{"the", "a", "one", "some"};
    static const std::vector<std::string> adj{"small", "old", "quiet", "happy", "dark", "green", "tall", "brave"};
    static const std::vector<std::string> noun{"dog", "river", "house", "bird", "tree", "road", "child",
                                               "boat", "king", "horse", "garden", "stone", "lamp", "wolf"};
    static const std::vector<std::string> verb{"sees", "finds", "follows", "paints", "carries", "watches",
                                               "builds", "hears"};
    static const std::vector<std::string> prep{"near", "behind", "under", "over", "beside"};
    auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::string out = pick(det) + " " + pick(adj) + " " + pick(noun) + " " + pick(verb) + " " + pick(det) + " " +
                      pick(noun);
    return out + " " + pick(prep) + " the " + pick(noun);
}

// The first four words of a filler sentence.
std::string filler_probe(const std::string& sentence) {
    std::size_t pos = 0;
    for (int w = 0; w < 4; ++w) pos = sentence.find(' ', pos) + 1;
    return sentence.substr(0, pos - 1);
}

std::string json_line_error(const std::string& path, std::size_t line, const std::string& what) {
    return path + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

Dataset gen_dataset(const DataConfig& cfg) {
    if (cfg.n_facts == 0) throw ConfigError("data: n_facts must be >= 1");
    if (cfg.n_heldout > cfg.n_background) throw ConfigError("data: n_heldout exceeds n_background");
    if (cfg.n_heldout_filler > cfg.n_filler) throw ConfigError("data: n_heldout_filler exceeds n_filler");
    if (cfg.n_heldout_filler == 0 && cfg.n_heldout == 0) {
        throw ConfigError("data: locality probes need held-out filler or background facts");
    }

    std::mt19937_64 rng(cfg.seed);
    const std::size_t total = cfg.n_facts + cfg.n_background;
    std::set<std::string> used;
    std::vector<Fact> facts;
    facts.reserve(total);
    std::uniform_int_distribution<std::size_t> pick_rel(0, relations().size() - 1);
    while (facts.size() < total) {
        std::string s = make_subject(rng);
        if (!used.insert(s).second) continue;
        Fact f;
        f.subject = std::move(s);
        f.relation = pick_rel(rng);
        std::uniform_int_distribution<std::size_t> pick_obj(0, relations()[f.relation].objects.size() - 1);
        f.object = pick_obj(rng);
        facts.push_back(std::move(f));
    }
    std::vector<std::string> filler;
    std::set<std::string> filler_seen;
    while (filler.size() < cfg.n_filler) {
        std::string line = make_filler(rng);
        if (filler_seen.insert(line).second) filler.push_back(std::move(line));
    }

    // Corpus order: facts, then filler. The last n_heldout background facts and
    // the last n_heldout_filler filler lines are never sampled as irrelevant
    // queries during editing.
    Dataset data;
    for (const auto& f : facts) {
        for (auto& line : fact_lines(f)) data.corpus.push_back(std::move(line));
    }
    data.corpus.insert(data.corpus.end(), filler.begin(), filler.end());
    const std::size_t pool_end = total - cfg.n_heldout;
    for (std::size_t i = cfg.n_facts; i < total; ++i) {
        for (auto& line : fact_lines(facts[i])) {
            (i < pool_end ? data.irrelevant : data.heldout).push_back(std::move(line));
        }
    }
    const std::size_t filler_end = cfg.n_filler - cfg.n_heldout_filler;
    for (std::size_t i = 0; i < cfg.n_filler; ++i) {
        (i < filler_end ? data.irrelevant : data.heldout).push_back(filler[i]);
    }

    for (std::size_t i = 0; i < cfg.n_facts; ++i) {
        const Fact& f = facts[i];
        const Relation& r = relations()[f.relation];
        std::uniform_int_distribution<std::size_t> shift(1, r.objects.size() - 1);
        const std::size_t new_obj = (f.object + shift(rng)) % r.objects.size();

        EditExample ex;
        ex.prompt = encode_bytes(render(r.prompt, f.subject));
        ex.target = encode_bytes(" " + r.objects[new_obj]);
        ex.paraphrase = encode_bytes(render(r.paraphrase, f.subject));
        if (cfg.n_heldout_filler > 0) {
            ex.locality = encode_bytes(filler_probe(filler[filler_end + i % cfg.n_heldout_filler]));
        } else {
            const Fact& probe = facts[pool_end + i % cfg.n_heldout];
            ex.locality = encode_bytes(render(relations()[probe.relation].prompt, probe.subject));
        }
        if (*ex.paraphrase == ex.prompt) throw InputError("data: prompt and paraphrase coincide");
        data.stream.examples.push_back(std::move(ex));
        data.original_targets.push_back(" " + r.objects[f.object]);
    }
    return data;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw IoError("failed writing " + path);
}

std::vector<Tokens> encode_lines(const std::vector<std::string>& lines) {
    std::vector<Tokens> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(encode_bytes(l));
    return out;
}

EditStream load_stream(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open stream " + path);
    EditStream stream;
    std::set<std::string> prompts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw ParseError(json_line_error(path, lineno, "malformed JSON record"));
        }
        if (!rec.is_object()) throw ParseError(json_line_error(path, lineno, "record is not an object"));
        auto text = [&](const char* key, bool required) -> std::optional<std::string> {
            auto it = rec.find(key);
            if (it == rec.end() || it->is_null()) {
                if (required) throw ParseError(json_line_error(path, lineno, std::string("missing \"") + key + "\""));
                return std::nullopt;
            }
            if (!it->is_string()) {
                throw ParseError(json_line_error(path, lineno, std::string("\"") + key + "\" must be a string"));
            }
            return it->get<std::string>();
        };
        EditExample ex;
        const std::string prompt = *text("prompt", true);
        const std::string target = *text("target", true);
        if (prompt.empty() || target.empty()) {
            throw ParseError(json_line_error(path, lineno, "prompt and target must be non-empty"));
        }
        if (!prompts.insert(prompt).second) {
            throw ParseError(json_line_error(path, lineno, "duplicate prompt"));
        }
        ex.prompt = encode_bytes(prompt);
        ex.target = encode_bytes(target);
        if (auto p = text("paraphrase", false)) ex.paraphrase = encode_bytes(*p);
        ex.locality = encode_bytes(*text("locality", true));
        stream.examples.push_back(std::move(ex));
    }
    return stream;
}

void save_stream(const EditStream& stream, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write stream " + path);
    for (const auto& ex : stream.examples) {
        nlohmann::ordered_json rec;
        rec["prompt"] = decode_bytes(ex.prompt);
        rec["target"] = decode_bytes(ex.target);
        if (ex.paraphrase) rec["paraphrase"] = decode_bytes(*ex.paraphrase);
        rec["locality"] = decode_bytes(ex.locality);
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("failed writing stream " + path);
}

void save_dataset(const Dataset& data, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
    const std::filesystem::path d(dir);
    save_stream(data.stream, (d / "stream.jsonl").string());
    write_lines(data.corpus, (d / "corpus.txt").string());
    write_lines(data.irrelevant, (d / "irrelevant.txt").string());
    write_lines(data.heldout, (d / "heldout.txt").string());
    write_lines(data.original_targets, (d / "original.txt").string());
}

Dataset load_dataset(const std::string& dir) {
    const std::filesystem::path d(dir);
    Dataset data;
    data.stream = load_stream((d / "stream.jsonl").string());
    data.stream.corpus_ref = (d / "corpus.txt").string();
    data.corpus = read_lines((d / "corpus.txt").string());
    data.irrelevant = read_lines((d / "irrelevant.txt").string());
    if (std::filesystem::exists(d / "heldout.txt")) data.heldout = read_lines((d / "heldout.txt").string());
    if (std::filesystem::exists(d / "original.txt")) {
        // Original targets start with a space, so keep lines verbatim.
        std::ifstream in(d / "original.txt");
        std::string line;
        while (std::getline(in, line)) data.original_targets.push_back(line);
    }
    return data;
}

}  // namespace wise
