#include "fedzs/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "fedzs/common.hpp"

namespace fedzs::cli {

namespace {

std::string format_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

void write_metrics_csv(std::ostream& out,
                       const std::vector<federation::MetricsRecord>& metrics) {
    out << "iteration,entity,phase,accuracy,label_count,public_size,new_labels_resolved\n";
    for (const auto& m : metrics)
        out << m.iteration << ',' << m.entity << ',' << m.phase << ','
            << format_real(m.accuracy) << ',' << m.label_count << ',' << m.public_size
            << ',' << m.new_labels_resolved << "\n";
}

void write_clusters_csv(std::ostream& out,
                        const std::vector<federation::ClusterPlotRow>& rows) {
    out << "iteration,user,slot,pc1,pc2,cluster_id\n";
    for (const auto& r : rows)
        out << r.iteration << ',' << r.user << ',' << r.slot << ','
            << format_real(r.pc1) << ',' << format_real(r.pc2) << ',' << r.cluster_id
            << "\n";
}

nlohmann::json build_summary(const scenario::ScenarioConfig& cfg,
                             const federation::RunResult& result) {
    std::map<int, std::vector<double>> local_by_user;
    std::vector<double> global_by_round;
    std::map<int, std::vector<double>> local_by_round;
    for (const auto& m : result.metrics) {
        if (m.phase == "local") {
            const int user = std::stoi(m.entity.substr(5));
            local_by_user[user].push_back(m.accuracy);
            local_by_round[m.iteration].push_back(m.accuracy);
        } else {
            global_by_round.push_back(m.accuracy);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return 0.0;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };

    double mean_local_sum = 0.0;
    std::size_t mean_local_n = 0;
    nlohmann::json per_user = nlohmann::json::array();
    for (const auto& [user, accs] : local_by_user) {
        per_user.push_back({{"user", user}, {"mean_local_accuracy", mean(accs)}});
        for (double a : accs) mean_local_sum += a;
        mean_local_n += accs.size();
    }
    const double mean_local = mean_local_n ? mean_local_sum / mean_local_n : 0.0;
    const double mean_global = mean(global_by_round);

    int positive_rounds = 0;
    int round = 1;
    for (double g : global_by_round) {
        if (g > mean(local_by_round[round])) ++positive_rounds;
        ++round;
    }

    nlohmann::json resolutions = nlohmann::json::array();
    for (const auto& r : result.resolutions)
        resolutions.push_back({{"iteration", r.iteration},
                               {"user", r.user},
                               {"slot", r.slot},
                               {"source", result.registry.name(r.source_label)},
                               {"minted", result.registry.name(r.minted_label)},
                               {"cluster", r.cluster_id}});

    return {{"scenario", cfg.name},
            {"users", cfg.num_users},
            {"iterations", cfg.num_iterations},
            {"mean_local_accuracy", mean_local},
            {"mean_global_accuracy", mean_global},
            {"mean_increase", mean_global - mean_local},
            {"rounds_with_positive_increase", positive_rounds},
            {"mean_full_table_accuracy", mean(result.full_table_accuracy)},
            {"final_label_count", result.final_state.label_ids.size()},
            {"final_public_size", result.final_state.public_set.size()},
            {"per_user", per_user},
            {"resolutions", resolutions}};
}

}  // namespace

int cmd_run(const RunManifest& manifest, std::ostream& diag) {
    scenario::ScenarioConfig cfg;
    try {
        cfg = scenario::load_scenario_file(manifest.scenario_path);
        if (manifest.seed_override) cfg.master_seed = *manifest.seed_override;
        if (manifest.oracle_k) cfg.clustering.oracle_k = true;
        if (manifest.silent) cfg.mode = scenario::ReportingMode::kSilent;

        const auto findings = scenario::validate_scenario(cfg);
        if (!findings.empty()) {
            for (const auto& f : findings) diag << "finding: " << f << "\n";
            return kExitValidation;
        }
    } catch (const ParseError& e) {
        diag << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    namespace fs = std::filesystem;
    try {
        const federation::RunResult result = federation::run(cfg);

        fs::create_directories(manifest.out_dir);
        const fs::path metrics_tmp = manifest.out_dir / "metrics.csv.tmp";
        const fs::path clusters_tmp = manifest.out_dir / "clusters.csv.tmp";
        const fs::path summary_tmp = manifest.out_dir / "summary.json.tmp";
        {
            std::ofstream m(metrics_tmp), c(clusters_tmp), s(summary_tmp);
            if (!m || !c || !s)
                throw InputError("cannot write into output directory " +
                                 manifest.out_dir.string());
            write_metrics_csv(m, result.metrics);
            write_clusters_csv(c, result.cluster_plots);
            s << build_summary(cfg, result).dump(2) << "\n";
        }
        fs::rename(metrics_tmp, manifest.out_dir / "metrics.csv");
        fs::rename(clusters_tmp, manifest.out_dir / "clusters.csv");
        fs::rename(summary_tmp, manifest.out_dir / "summary.json");
        return kExitOk;
    } catch (const ConfigError& e) {
        diag << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        std::error_code ec;
        fs::remove(manifest.out_dir / "metrics.csv.tmp", ec);
        fs::remove(manifest.out_dir / "clusters.csv.tmp", ec);
        fs::remove(manifest.out_dir / "summary.json.tmp", ec);
        return kExitRuntime;
    }
}

int cmd_validate(const std::filesystem::path& scenario_path, std::ostream& out) {
    try {
        const scenario::ScenarioConfig cfg = scenario::load_scenario_file(scenario_path);
        const auto findings = scenario::validate_scenario(cfg);
        for (const auto& f : findings) out << "finding: " << f << "\n";
        if (findings.empty()) {
            out << "scenario '" << cfg.name << "' is valid\n";
            return kExitOk;
        }
        return kExitValidation;
    } catch (const ParseError& e) {
        out << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

int cmd_impress(const ImpressArgs& args, std::ostream& diag) {
    try {
        const nn::Classifier model = nn::load_model(args.model_path);
        const auto it =
            std::find(model.label_ids.begin(), model.label_ids.end(), args.class_id);
        if (it == model.label_ids.end()) {
            diag << "error: model has no class with label id " << args.class_id << "\n";
            return kExitValidation;
        }
        if (args.count < 1 || args.beta <= 0.0) {
            diag << "error: --n must be >= 1 and --beta positive\n";
            return kExitValidation;
        }
        const int col = static_cast<int>(it - model.label_ids.begin());

        const auto csm =
            impressions::class_similarity_matrix(nn::last_layer_weights(model));
        const auto conc = impressions::concentration_vector(csm, col, args.beta, 0.01);
        impressions::SoftmaxTargetBatch targets =
            impressions::sample_softmax(conc.values, args.count, 0xF00D);
        targets.class_index = col;
        impressions::SynthesisConfig sc;
        sc.samples_per_class = args.count;
        sc.dirichlet_beta = args.beta;
        const impressions::DataImpressionBatch batch =
            impressions::synthesize_impressions(model, targets, sc);

        data::Dataset out;
        out.features = batch.vectors;
        out.labels.assign(batch.vectors.rows(), args.class_id);
        data::save_feature_file(
            args.out_path, out,
            {"provenance: impression", "model: " + args.model_path.string(),
             "class: " + std::to_string(args.class_id)});
        return kExitOk;
    } catch (const ParseError& e) {
        diag << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const DegenerateWeightsError& e) {
        diag << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace fedzs::cli
