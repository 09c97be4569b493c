#include "fedzs/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fedzs/common.hpp"

namespace fedzs::scenario {

namespace {

// Seed-stream tags so unrelated draws never share a stream.
enum SeedTag : std::uint64_t {
    kTagCount = 0xC0,
    kTagDraw = 0xD0,
    kTagInject = 0x17,
};

std::vector<std::string> tokenize(const std::string& s) {
    std::istringstream ss(s);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

ArchitectureSpec parse_model_tokens(const std::vector<std::string>& tokens,
                                    int line_no) {
    ArchitectureSpec arch;
    if (tokens.empty())
        throw ParseError("empty model spec at line " + std::to_string(line_no));
    if (tokens.size() == 1 && tokens[0] == "linear") return arch;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        try {
            arch.widths.push_back(std::stoi(tokens[i]));
        } catch (const std::exception&) {
            throw ParseError("bad layer width '" + tokens[i] + "' at line " +
                             std::to_string(line_no));
        }
    }
    try {
        arch.activation = nn::activation_from_string(tokens.back());
    } catch (const ConfigError& e) {
        throw ParseError(std::string(e.what()) + " at line " + std::to_string(line_no));
    }
    return arch;
}

struct KeyValue {
    std::string key;
    std::string value;
    int line_no;
};

long long to_int(const KeyValue& kv) {
    try {
        return std::stoll(kv.value);
    } catch (const std::exception&) {
        throw ParseError("field '" + kv.key + "' expects an integer, got '" + kv.value +
                         "' at line " + std::to_string(kv.line_no));
    }
}

double to_real(const KeyValue& kv) {
    try {
        return std::stod(kv.value);
    } catch (const std::exception&) {
        throw ParseError("field '" + kv.key + "' expects a number, got '" + kv.value +
                         "' at line " + std::to_string(kv.line_no));
    }
}

bool to_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "on" || kv.value == "1") return true;
    if (kv.value == "false" || kv.value == "off" || kv.value == "0") return false;
    throw ParseError("field '" + kv.key + "' expects true/false at line " +
                     std::to_string(kv.line_no));
}

// Draws `count` distinct elements from `pool` in seeded order.
std::vector<std::size_t> draw_without_replacement(const std::vector<std::size_t>& pool,
                                                  std::size_t count,
                                                  std::uint64_t seed) {
    std::vector<std::size_t> indices(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) indices[i] = i;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t taken = 0; taken < count; ++taken) {
        std::uniform_int_distribution<std::size_t> pick(taken, indices.size() - 1);
        std::swap(indices[taken], indices[pick(rng)]);
        out.push_back(pool[indices[taken]]);
    }
    return out;
}

std::map<int, std::vector<std::size_t>> index_by_label(const data::Dataset& source) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < source.size(); ++i)
        by_label[source.labels[i]].push_back(i);
    return by_label;
}

}  // namespace

ScenarioConfig parse_scenario(std::istream& in, const std::string& origin) {
    ScenarioConfig cfg;
    cfg.announce_train = {};

    std::map<std::string, std::vector<std::string>> user_labels_by_name;
    std::map<int, std::vector<std::string>> user_label_names;
    std::map<int, ArchitectureSpec> user_archs;
    std::vector<std::string> base_names;
    std::vector<std::string> extra_names;
    struct PendingInject {
        int user, iteration, count, line_no;
        std::string label;
    };
    std::vector<PendingInject> pending_injects;
    struct PendingModel {
        int user, iteration;
        ArchitectureSpec arch;
    };
    std::vector<PendingModel> pending_models;
    bool announce_seen = false;
    bool init_lo_seen = false, init_hi_seen = false;

    std::string line;
    std::string section;
    int section_user = 0;
    int line_no = 0;

    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        // Strip trailing comments and whitespace.
        const std::size_t hash = line.find('#');
        std::string body = line.substr(0, hash);
        const std::size_t last = body.find_last_not_of(" \t\r");
        if (last == std::string::npos) continue;
        body = body.substr(first, last - first + 1);
        if (body.empty()) continue;

        if (body.front() == '[') {
            if (body.back() != ']')
                throw ParseError("unterminated section header at line " +
                                 std::to_string(line_no));
            const std::string inner = body.substr(1, body.size() - 2);
            const auto tokens = tokenize(inner);
            if (tokens.size() == 2 && tokens[0] == "user") {
                section = "user";
                try {
                    section_user = std::stoi(tokens[1]);
                } catch (const std::exception&) {
                    throw ParseError("bad user number at line " + std::to_string(line_no));
                }
            } else if (tokens.size() == 1) {
                section = tokens[0];
                section_user = 0;
            } else {
                throw ParseError("unrecognized section '" + inner + "' at line " +
                                 std::to_string(line_no));
            }
            continue;
        }

        if (section == "inject" || section == "models") {
            const auto tokens = tokenize(body);
            if (section == "inject") {
                if (tokens.size() != 4)
                    throw ParseError(
                        "inject rows are 'user iteration label count'; bad row at line " +
                        std::to_string(line_no));
                try {
                    pending_injects.push_back({std::stoi(tokens[0]), std::stoi(tokens[1]),
                                               std::stoi(tokens[3]), line_no, tokens[2]});
                } catch (const std::exception&) {
                    throw ParseError("non-numeric inject field at line " +
                                     std::to_string(line_no));
                }
            } else {
                if (tokens.size() < 3)
                    throw ParseError(
                        "model rows are 'user iteration widths... activation'; bad row at "
                        "line " +
                        std::to_string(line_no));
                PendingModel pm;
                try {
                    pm.user = std::stoi(tokens[0]);
                    pm.iteration = std::stoi(tokens[1]);
                } catch (const std::exception&) {
                    throw ParseError("non-numeric model schedule field at line " +
                                     std::to_string(line_no));
                }
                pm.arch = parse_model_tokens(
                    {tokens.begin() + 2, tokens.end()}, line_no);
                pending_models.push_back(std::move(pm));
            }
            continue;
        }

        const std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected 'key = value' at line " + std::to_string(line_no));
        auto trim = [](std::string s) {
            const std::size_t b = s.find_first_not_of(" \t");
            const std::size_t e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const KeyValue kv{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), line_no};
        if (kv.key.empty() || kv.value.empty())
            throw ParseError("empty key or value at line " + std::to_string(line_no));

        if (section == "scenario") {
            if (kv.key == "name") cfg.name = kv.value;
            else if (kv.key == "users") cfg.num_users = static_cast<int>(to_int(kv));
            else if (kv.key == "iterations") cfg.num_iterations = static_cast<int>(to_int(kv));
            else if (kv.key == "feature_dim") cfg.feature_dim = static_cast<int>(to_int(kv));
            else if (kv.key == "master_seed") cfg.master_seed = static_cast<std::uint64_t>(to_int(kv));
            else if (kv.key == "mode") {
                if (kv.value == "report") cfg.mode = ReportingMode::kReportNewClasses;
                else if (kv.value == "silent") cfg.mode = ReportingMode::kSilent;
                else throw ParseError("mode must be report|silent at line " + std::to_string(line_no));
            } else throw ParseError("unknown scenario field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "labels") {
            if (kv.key == "base") base_names = tokenize(kv.value);
            else if (kv.key == "extra") extra_names = tokenize(kv.value);
            else throw ParseError("unknown labels field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "corpus") {
            if (kv.key == "type") {
                if (kv.value == "synthetic") cfg.corpus.synthetic = true;
                else if (kv.value == "file") cfg.corpus.synthetic = false;
                else throw ParseError("corpus type must be synthetic|file at line " + std::to_string(line_no));
            } else if (kv.key == "separation") cfg.corpus.separation = to_real(kv);
            else if (kv.key == "path") cfg.corpus.path = kv.value;
            else throw ParseError("unknown corpus field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "public") {
            if (kv.key == "frames_per_label") cfg.public_frames_per_label = static_cast<int>(to_int(kv));
            else throw ParseError("unknown public field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "rounds") {
            if (kv.key == "frames_min") cfg.frames_min = static_cast<int>(to_int(kv));
            else if (kv.key == "frames_max") cfg.frames_max = static_cast<int>(to_int(kv));
            else throw ParseError("unknown rounds field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "train" || section == "announce") {
            nn::TrainConfig& t = section == "train" ? cfg.train : cfg.announce_train;
            if (section == "announce") announce_seen = true;
            if (kv.key == "epochs") t.epochs = static_cast<int>(to_int(kv));
            else if (kv.key == "learning_rate") t.learning_rate = to_real(kv);
            else if (kv.key == "batch_size") t.batch_size = static_cast<int>(to_int(kv));
            else throw ParseError("unknown " + section + " field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "synthesis") {
            auto& s = cfg.synthesis;
            if (kv.key == "impressions_per_class") s.samples_per_class = static_cast<int>(to_int(kv));
            else if (kv.key == "dirichlet_beta") s.dirichlet_beta = to_real(kv);
            else if (kv.key == "concentration_floor") s.concentration_floor = to_real(kv);
            else if (kv.key == "max_steps") s.max_steps = static_cast<int>(to_int(kv));
            else if (kv.key == "step_size") s.step_size = to_real(kv);
            else if (kv.key == "loss_tolerance") s.loss_tolerance = to_real(kv);
            else if (kv.key == "init_lo") { s.init_lo = to_real(kv); init_lo_seen = true; }
            else if (kv.key == "init_hi") { s.init_hi = to_real(kv); init_hi_seen = true; }
            else throw ParseError("unknown synthesis field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "clustering") {
            if (kv.key == "min_split_silhouette") cfg.clustering.min_split_silhouette = to_real(kv);
            else if (kv.key == "merge_distance") cfg.clustering.merge_distance = to_real(kv);
            else if (kv.key == "oracle_k") cfg.clustering.oracle_k = to_bool(kv);
            else throw ParseError("unknown clustering field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section == "user") {
            if (kv.key == "labels") user_label_names[section_user] = tokenize(kv.value);
            else if (kv.key == "model")
                user_archs[section_user] = parse_model_tokens(tokenize(kv.value), line_no);
            else throw ParseError("unknown user field '" + kv.key + "' at line " + std::to_string(line_no));
        } else if (section.empty()) {
            throw ParseError("content before any section at line " + std::to_string(line_no));
        } else {
            throw ParseError("unknown section '" + section + "' near line " + std::to_string(line_no));
        }
    }

    if (cfg.num_users < 1)
        throw ParseError(origin + ": scenario must declare users >= 1");
    if (base_names.empty())
        throw ParseError(origin + ": scenario must declare base labels");

    for (const auto& n : base_names) cfg.base_labels.push_back(cfg.registry.add(n));
    for (const auto& n : extra_names) cfg.extra_labels.push_back(cfg.registry.add(n));

    cfg.user_labels.resize(static_cast<std::size_t>(cfg.num_users));
    cfg.user_arch.resize(static_cast<std::size_t>(cfg.num_users));
    for (int u = 1; u <= cfg.num_users; ++u) {
        const auto it = user_label_names.find(u);
        if (it == user_label_names.end())
            throw ParseError(origin + ": missing [user " + std::to_string(u) + "] section");
        for (const auto& n : it->second) {
            const auto id = cfg.registry.find(n);
            if (!id)
                throw ParseError(origin + ": user " + std::to_string(u) +
                                 " references unknown label '" + n + "'");
            cfg.user_labels[static_cast<std::size_t>(u - 1)].push_back(*id);
        }
        const auto ait = user_archs.find(u);
        if (ait != user_archs.end())
            cfg.user_arch[static_cast<std::size_t>(u - 1)] = ait->second;
    }

    for (const auto& pi : pending_injects) {
        const auto id = cfg.registry.find(pi.label);
        if (!id)
            throw ParseError(origin + ": inject row at line " + std::to_string(pi.line_no) +
                             " references unknown label '" + pi.label + "'");
        cfg.injections.push_back({pi.user, pi.iteration, *id, pi.count});
    }
    for (auto& pm : pending_models)
        cfg.architecture_events.push_back({pm.user, pm.iteration, std::move(pm.arch)});

    if (!announce_seen) cfg.announce_train = cfg.train;
    cfg.synthesis_init_from_public = !(init_lo_seen && init_hi_seen);
    return cfg;
}

ScenarioConfig load_scenario_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file: " + path.string());
    return parse_scenario(in, path.string());
}

std::vector<std::string> validate_scenario(const ScenarioConfig& cfg) {
    std::vector<std::string> findings;
    auto flag = [&](const std::string& s) { findings.push_back(s); };

    if (cfg.num_iterations < 1) flag("iterations must be >= 1");
    if (cfg.feature_dim < 1) flag("feature_dim must be >= 1");
    if (cfg.frames_min < 1 || cfg.frames_max < cfg.frames_min)
        flag("rounds frame range must satisfy 1 <= frames_min <= frames_max");
    if (cfg.public_frames_per_label < 1) flag("public frames_per_label must be >= 1");
    if (cfg.train.epochs < 1 || cfg.train.batch_size < 1 || cfg.train.learning_rate <= 0)
        flag("train hyperparameters must be positive");
    if (cfg.synthesis.samples_per_class < 1 || cfg.synthesis.dirichlet_beta <= 0 ||
        cfg.synthesis.step_size <= 0 || cfg.synthesis.loss_tolerance <= 0)
        flag("synthesis hyperparameters must be positive");
    if (cfg.clustering.min_split_silhouette < -1 || cfg.clustering.min_split_silhouette > 1)
        flag("min_split_silhouette must lie in [-1, 1]");
    if (!cfg.corpus.synthetic && !std::filesystem::exists(cfg.corpus.path))
        flag("corpus file does not exist: " + cfg.corpus.path.string());

    for (std::size_t u = 0; u < cfg.user_labels.size(); ++u) {
        if (cfg.user_labels[u].empty())
            flag("user " + std::to_string(u + 1) + " holds no labels");
        for (int l : cfg.user_labels[u])
            if (std::find(cfg.base_labels.begin(), cfg.base_labels.end(), l) ==
                cfg.base_labels.end())
                flag("user " + std::to_string(u + 1) + " initial label '" +
                     cfg.registry.name(l) + "' is not a base label");
    }

    for (const auto& ev : cfg.injections) {
        if (ev.user < 1 || ev.user > cfg.num_users)
            flag("inject schedule references unknown user " + std::to_string(ev.user));
        if (ev.iteration < 1 || ev.iteration > cfg.num_iterations)
            flag("unreachable injection at iteration " + std::to_string(ev.iteration) +
                 " (run has " + std::to_string(cfg.num_iterations) + ")");
        if (ev.count < 1) flag("injection count must be positive");
        if (std::find(cfg.base_labels.begin(), cfg.base_labels.end(), ev.label) !=
            cfg.base_labels.end())
            flag("label collision: injected label '" + cfg.registry.name(ev.label) +
                 "' is already in the public label set");
    }

    std::set<std::pair<int, int>> seen;
    for (const auto& ev : cfg.architecture_events) {
        if (ev.user < 1 || ev.user > cfg.num_users)
            flag("model schedule references unknown user " + std::to_string(ev.user));
        if (ev.iteration < 1 || ev.iteration > cfg.num_iterations)
            flag("model schedule entry at unreachable iteration " +
                 std::to_string(ev.iteration));
        if (!seen.insert({ev.user, ev.iteration}).second)
            flag("schedule conflict: two model entries for user " +
                 std::to_string(ev.user) + " at iteration " + std::to_string(ev.iteration));
        for (int w : ev.arch.widths)
            if (w < 1) flag("model schedule entry has a non-positive width");
    }
    return findings;
}

Corpus build_corpus(const ScenarioConfig& cfg) {
    // Per-class pool requirement: the public slice plus the largest possible
    // single-round draw, or the largest scheduled injection for extra classes.
    int max_inject = cfg.frames_max;
    for (const auto& ev : cfg.injections) max_inject = std::max(max_inject, ev.count);
    const int per_class =
        std::max(cfg.public_frames_per_label + cfg.frames_max, max_inject);

    data::Dataset full;
    if (cfg.corpus.synthetic) {
        const int num_classes =
            static_cast<int>(cfg.base_labels.size() + cfg.extra_labels.size());
        full = data::generate_synthetic_dataset(num_classes, per_class, cfg.feature_dim,
                                                cfg.corpus.separation, cfg.master_seed);
    } else {
        full = data::load_feature_file(cfg.corpus.path);
        if (static_cast<int>(full.feature_dim()) != cfg.feature_dim)
            throw ConfigError("corpus file dimension " +
                              std::to_string(full.feature_dim()) +
                              " does not match scenario feature_dim");
    }

    Corpus corpus;
    corpus.public_set =
        data::make_public_dataset(full, cfg.base_labels, cfg.public_frames_per_label);

    // Private pool: everything beyond each base label's public slice, plus
    // all samples of the extra classes.
    std::map<int, int> taken;
    for (int l : cfg.base_labels) taken[l] = cfg.public_frames_per_label;
    for (std::size_t i = 0; i < full.size(); ++i) {
        auto it = taken.find(full.labels[i]);
        if (it != taken.end() && it->second > 0) {
            --it->second;
            continue;
        }
        corpus.private_pool.append(full.features.row(i), full.labels[i]);
    }
    return corpus;
}

ArchitectureSpec architecture_in_force(const ScenarioConfig& cfg, int user,
                                       int iteration) {
    ArchitectureSpec arch = cfg.user_arch[static_cast<std::size_t>(user - 1)];
    int best_iter = 0;
    for (const auto& ev : cfg.architecture_events) {
        if (ev.user != user || ev.iteration > iteration) continue;
        if (ev.iteration > best_iter) {
            best_iter = ev.iteration;
            arch = ev.arch;
        }
    }
    return arch;
}

RoundAssignment partition_round(const ScenarioConfig& cfg, const data::Dataset& source,
                                int iteration, const LabelState* state) {
    if (iteration < 1 || iteration > cfg.num_iterations)
        throw InputError("iteration out of range");

    const auto by_label = index_by_label(source);
    RoundAssignment assignment;
    assignment.iteration = iteration;
    assignment.user_data.resize(static_cast<std::size_t>(cfg.num_users));
    assignment.new_slots.resize(static_cast<std::size_t>(cfg.num_users));

    for (int user = 1; user <= cfg.num_users; ++user) {
        const std::size_t ui = static_cast<std::size_t>(user - 1);
        std::vector<int> labels =
            state ? state->user_labels[ui] : cfg.user_labels[ui];
        std::sort(labels.begin(), labels.end());
        assignment.user_labels.push_back(labels);
        assignment.user_arch.push_back(architecture_in_force(cfg, user, iteration));

        data::Dataset& ds = assignment.user_data[ui];
        for (int label : labels) {
            // Minted labels stream from their source class's pool.
            int source_label = label;
            if (state) {
                const auto it = state->minted_to_source.find(label);
                if (it != state->minted_to_source.end()) source_label = it->second;
            }
            const auto pool_it = by_label.find(source_label);
            if (pool_it == by_label.end())
                throw ConfigError("source corpus has no samples of label " +
                                  std::to_string(source_label));
            const auto& pool = pool_it->second;

            std::mt19937_64 count_rng(derive_seed(
                cfg.master_seed, {kTagCount, static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(user),
                                  static_cast<std::uint64_t>(source_label)}));
            std::uniform_int_distribution<int> count_dist(cfg.frames_min, cfg.frames_max);
            const int count = count_dist(count_rng);
            if (static_cast<std::size_t>(count) > pool.size())
                throw ConfigError("source corpus has " + std::to_string(pool.size()) +
                                  " samples of label " + std::to_string(source_label) +
                                  ", round needs " + std::to_string(count));

            const auto rows = draw_without_replacement(
                pool, static_cast<std::size_t>(count),
                derive_seed(cfg.master_seed,
                            {kTagDraw, static_cast<std::uint64_t>(iteration),
                             static_cast<std::uint64_t>(user),
                             static_cast<std::uint64_t>(source_label)}));
            for (std::size_t r : rows) ds.append(source.features.row(r), label);
        }
    }
    return assignment;
}

InjectionOutcome apply_injection(RoundAssignment& assignment, const ScenarioConfig& cfg,
                                 const data::Dataset& source, int iteration,
                                 const LabelState* state) {
    InjectionOutcome outcome;
    const auto by_label = index_by_label(source);

    for (const auto& ev : cfg.injections) {
        if (ev.iteration != iteration) continue;
        if (ev.user < 1 || ev.user > cfg.num_users)
            throw ConfigError("injection references unknown user " +
                              std::to_string(ev.user));
        if (std::find(cfg.base_labels.begin(), cfg.base_labels.end(), ev.label) !=
            cfg.base_labels.end())
            throw ConfigError("injected label '" + cfg.registry.name(ev.label) +
                              "' is already in the public label set");

        const std::size_t ui = static_cast<std::size_t>(ev.user - 1);
        const auto pool_it = by_label.find(ev.label);
        if (pool_it == by_label.end() ||
            pool_it->second.size() < static_cast<std::size_t>(ev.count))
            throw ConfigError("source corpus cannot supply " + std::to_string(ev.count) +
                              " samples of injected label " +
                              cfg.registry.name(ev.label));

        const auto rows = draw_without_replacement(
            pool_it->second, static_cast<std::size_t>(ev.count),
            derive_seed(cfg.master_seed,
                        {kTagInject, static_cast<std::uint64_t>(iteration),
                         static_cast<std::uint64_t>(ev.user),
                         static_cast<std::uint64_t>(ev.label)}));

        int resolved_as = -1;
        if (state) {
            const auto it = state->resolved.find(ev.label);
            if (it != state->resolved.end()) resolved_as = it->second;
        }

        data::Dataset& ds = assignment.user_data[ui];
        if (resolved_as >= 0) {
            // Already-known class: ordinary data under its minted id.
            for (std::size_t r : rows) ds.append(source.features.row(r), resolved_as);
            auto& labels = assignment.user_labels[ui];
            if (std::find(labels.begin(), labels.end(), resolved_as) == labels.end()) {
                labels.push_back(resolved_as);
                std::sort(labels.begin(), labels.end());
                outcome.newly_held.push_back({ev.user, resolved_as});
            }
        } else {
            for (std::size_t r : rows) ds.append(source.features.row(r), ev.label);
            auto& slots = assignment.new_slots[ui];
            const auto slot_it =
                std::find_if(slots.begin(), slots.end(), [&](const NewClassSlot& s) {
                    return s.source_label == ev.label;
                });
            if (slot_it == slots.end())
                slots.push_back({ev.label, ev.count});
            else
                slot_it->count += ev.count;
        }
    }
    return outcome;
}

}  // namespace fedzs::scenario
