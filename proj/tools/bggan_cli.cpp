// Command-line driver: synthesize cohorts, train, generate, evaluate,
// analyze, and sweep — every run leaves a run_manifest.json in its out-dir.
#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bggan/analysis.hpp"
#include "bggan/bggan.hpp"
#include "bggan/errors.hpp"
#include "bggan/rng.hpp"
#include "bggan/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bggan;

namespace {

constexpr int kManifestSchema = 1;

// ---------------------------------------------------------------- plumbing

std::string hash_file(const fs::path& p, std::uint64_t h) {
    std::ifstream in(p, std::ios::binary);
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
        }
    }
    char out[20];
    std::snprintf(out, sizeof(out), "%016" PRIx64, h);
    return out;
}

/// FNV-1a over every regular file (sorted relative paths, then bytes);
/// run_manifest.json itself is excluded so a re-run hashes identically.
std::string hash_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw ValidationError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().filename() != "run_manifest.json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::string hex;
    for (const fs::path& f : files) {
        const std::string rel = fs::relative(f, dir).generic_string();
        for (const char c : rel) {
            h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
        }
        hex = hash_file(f, h);
        h = std::stoull(hex, nullptr, 16);
    }
    char out[20];
    std::snprintf(out, sizeof(out), "%016" PRIx64, h);
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("missing file: " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("cannot parse " + path + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot open for writing: " + path.string());
    }
    out << j.dump(2) << "\n";
}

json config_snapshot(const TrainConfig& c) {
    return json{{"lr_gen", c.lr_gen},
                {"lr_disc", c.lr_disc},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"n_rois", c.n_rois},
                {"hidden_dim", c.hidden_dim},
                {"latent_dim", c.latent_dim},
                {"disc_hidden", c.disc_hidden},
                {"classifier_hidden", c.classifier_hidden},
                {"inner_layers", c.inner_layers},
                {"n_classes", c.n_classes},
                {"dropout", c.dropout},
                {"balancer_cutoff", c.balancer_cutoff},
                {"lambda_recon", c.lambda_recon},
                {"lambda_sc", c.lambda_sc},
                {"lambda_fc", c.lambda_fc},
                {"lambda_p_remap", c.lambda_p_remap},
                {"patience", c.patience},
                {"min_improvement", c.min_improvement},
                {"seed", c.seed}};
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        std::uint64_t seed, const json& config, const json& dataset,
                        const json& artifacts) {
    write_json_file(out_dir / "run_manifest.json", json{{"schema_version", kManifestSchema},
                                                        {"command", command},
                                                        {"seed", seed},
                                                        {"config", config},
                                                        {"dataset", dataset},
                                                        {"artifacts", artifacts}});
}

json dataset_stamp(const std::string& dir) {
    return json{{"path", dir}, {"hash", hash_dir(dir)}};
}

// ------------------------------------------------------------ config files

/// Flat keys mirroring the TrainConfig field names; anything else is a typo.
void apply_config_json(TrainConfig& c, const json& j, const std::string& where) {
    if (!j.is_object()) {
        throw ValidationError(where + ": config must be a flat object");
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "lr_gen") {
                c.lr_gen = value.get<double>();
            } else if (key == "lr_disc") {
                c.lr_disc = value.get<double>();
            } else if (key == "batch_size") {
                c.batch_size = value.get<int>();
            } else if (key == "max_epochs") {
                c.max_epochs = value.get<int>();
            } else if (key == "n_rois") {
                c.n_rois = value.get<int>();
            } else if (key == "hidden_dim") {
                c.hidden_dim = value.get<int>();
            } else if (key == "latent_dim") {
                c.latent_dim = value.get<int>();
            } else if (key == "disc_hidden") {
                c.disc_hidden = value.get<int>();
            } else if (key == "classifier_hidden") {
                c.classifier_hidden = value.get<int>();
            } else if (key == "inner_layers") {
                c.inner_layers = value.get<int>();
            } else if (key == "n_classes") {
                c.n_classes = value.get<int>();
            } else if (key == "dropout") {
                c.dropout = value.get<double>();
            } else if (key == "balancer_cutoff") {
                c.balancer_cutoff = value.get<int>();
            } else if (key == "lambda_recon") {
                c.lambda_recon = value.get<double>();
            } else if (key == "lambda_sc") {
                c.lambda_sc = value.get<double>();
            } else if (key == "lambda_fc") {
                c.lambda_fc = value.get<double>();
            } else if (key == "lambda_p_remap") {
                c.lambda_p_remap = value.get<bool>();
            } else if (key == "patience") {
                c.patience = value.get<int>();
            } else if (key == "min_improvement") {
                c.min_improvement = value.get<double>();
            } else if (key == "seed") {
                c.seed = value.get<std::uint64_t>();
            } else {
                throw ValidationError(where + ": unknown config key '" + key + "'");
            }
        } catch (const json::exception&) {
            throw ValidationError(where + ": bad value for '" + key + "'");
        }
    }
}

/// CLI-flag layer of the flag > file > default precedence.
struct ConfigOverrides {
    std::optional<double> lr_gen, lr_disc, dropout, lambda_recon, lambda_sc, lambda_fc,
        min_improvement;
    std::optional<int> batch_size, max_epochs, hidden_dim, latent_dim, disc_hidden,
        classifier_hidden, inner_layers, n_classes, balancer_cutoff, patience, n_rois;
    std::optional<std::uint64_t> seed;
    std::optional<bool> lambda_p_remap;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--lr-gen", lr_gen, "generator learning rate");
        cmd->add_option("--lr-disc", lr_disc, "critic learning rate");
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--max-epochs", max_epochs);
        cmd->add_option("--n-rois", n_rois);
        cmd->add_option("--hidden-dim", hidden_dim);
        cmd->add_option("--latent-dim", latent_dim);
        cmd->add_option("--disc-hidden", disc_hidden);
        cmd->add_option("--classifier-hidden", classifier_hidden);
        cmd->add_option("--inner-layers", inner_layers);
        cmd->add_option("--n-classes", n_classes);
        cmd->add_option("--dropout", dropout);
        cmd->add_option("--balancer-cutoff", balancer_cutoff,
                        "last epoch on which the Balancer runs");
        cmd->add_option("--lambda-recon", lambda_recon);
        cmd->add_option("--lambda-sc", lambda_sc);
        cmd->add_option("--lambda-fc", lambda_fc);
        cmd->add_flag("--lambda-p-remap", lambda_p_remap,
                      "feed the critic 1+lambda instead of lambda");
        cmd->add_option("--patience", patience);
        cmd->add_option("--min-improvement", min_improvement);
        cmd->add_option("--seed", seed, "root seed for every random draw");
    }

    void apply(TrainConfig& c) const {
        if (lr_gen) c.lr_gen = *lr_gen;
        if (lr_disc) c.lr_disc = *lr_disc;
        if (batch_size) c.batch_size = *batch_size;
        if (max_epochs) c.max_epochs = *max_epochs;
        if (n_rois) c.n_rois = *n_rois;
        if (hidden_dim) c.hidden_dim = *hidden_dim;
        if (latent_dim) c.latent_dim = *latent_dim;
        if (disc_hidden) c.disc_hidden = *disc_hidden;
        if (classifier_hidden) c.classifier_hidden = *classifier_hidden;
        if (inner_layers) c.inner_layers = *inner_layers;
        if (n_classes) c.n_classes = *n_classes;
        if (dropout) c.dropout = *dropout;
        if (balancer_cutoff) c.balancer_cutoff = *balancer_cutoff;
        if (lambda_recon) c.lambda_recon = *lambda_recon;
        if (lambda_sc) c.lambda_sc = *lambda_sc;
        if (lambda_fc) c.lambda_fc = *lambda_fc;
        if (lambda_p_remap) c.lambda_p_remap = *lambda_p_remap;
        if (patience) c.patience = *patience;
        if (min_improvement) c.min_improvement = *min_improvement;
        if (seed) c.seed = *seed;
    }
};

Direction parse_direction(const std::string& s) {
    if (s == "sc2fc") {
        return Direction::sc2fc;
    }
    if (s == "fc2sc") {
        return Direction::fc2sc;
    }
    throw ValidationError("direction must be sc2fc or fc2sc, got '" + s + "'");
}

// --------------------------------------------------------------- cmd_synth

CohortSpec cohort_spec_from_json(const json& j, const std::string& where) {
    CohortSpec spec;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "n_per_class") {
                spec.n_per_class = value.get<std::vector<int>>();
            } else if (key == "n_rois") {
                spec.n_rois = value.get<int>();
            } else if (key == "n_communities") {
                spec.n_communities = value.get<int>();
            } else if (key == "noise_sigma") {
                spec.noise_sigma = value.get<double>();
            } else if (key == "seed") {
                spec.seed = value.get<std::uint64_t>();
            } else if (key == "planted_edges") {
                for (const json& e : value) {
                    PlantedEdge pe;
                    pe.i = e.at("i").get<int>();
                    pe.j = e.at("j").get<int>();
                    pe.deltas = e.at("deltas").get<std::vector<double>>();
                    spec.planted_edges.push_back(std::move(pe));
                }
            } else {
                throw ValidationError(where + ": unknown cohort key '" + key + "'");
            }
        } catch (const json::exception&) {
            throw ValidationError(where + ": bad value for '" + key + "'");
        }
    }
    return spec;
}

void cmd_synth(const std::string& spec_file, const std::string& out_dir,
               std::optional<std::uint64_t> seed) {
    CohortSpec spec = cohort_spec_from_json(read_json_file(spec_file), spec_file);
    if (seed) {
        spec.seed = *seed;
    }
    const Cohort cohort = make_cohort(spec);
    fs::create_directories(out_dir);
    save_cohort(out_dir, cohort);
    std::printf("wrote %zu subjects to %s\n", cohort.size(), out_dir.c_str());

    json spec_json{{"n_per_class", spec.n_per_class},
                   {"n_rois", spec.n_rois},
                   {"n_communities", spec.n_communities},
                   {"noise_sigma", spec.noise_sigma},
                   {"seed", spec.seed}};
    json edges = json::array();
    for (const PlantedEdge& e : spec.planted_edges) {
        edges.push_back({{"i", e.i}, {"j", e.j}, {"deltas", e.deltas}});
    }
    spec_json["planted_edges"] = edges;
    write_run_manifest(out_dir, "synth", spec.seed, spec_json, dataset_stamp(out_dir),
                       json{{"dataset_manifest", (fs::path(out_dir) / "manifest").string()}});
}

// --------------------------------------------------------------- cmd_train

TrainConfig resolve_config(const std::string& config_file, const ConfigOverrides& flags,
                           const Cohort& cohort) {
    TrainConfig cfg;
    cfg.n_rois = 0;  // sentinel: fall back to the dataset's size below
    if (!config_file.empty()) {
        apply_config_json(cfg, read_json_file(config_file), config_file);
    }
    flags.apply(cfg);

    const int data_rois = static_cast<int>(cohort.at(0).sc.rows());
    if (cfg.n_rois == 0) {
        cfg.n_rois = data_rois;
    } else if (cfg.n_rois != data_rois) {
        throw ValidationError("config n_rois=" + std::to_string(cfg.n_rois) +
                              " but the dataset has " + std::to_string(data_rois));
    }
    const int classes = class_count(cohort);
    if (cfg.n_classes < classes) {
        cfg.n_classes = classes;
    }
    cfg.validate();
    return cfg;
}

void cmd_train(const std::string& data_dir, const std::string& config_file,
               const std::string& out_dir, const ConfigOverrides& flags) {
    const Cohort cohort = load_cohort(data_dir);
    const TrainConfig cfg = resolve_config(config_file, flags, cohort);
    const auto contexts = make_contexts(cohort);

    auto rng = make_rng(cfg.seed);
    BgganModel model = make_model(cfg, static_cast<int>(cohort[0].feats.cols()),
                                  static_cast<int>(cohort[0].feats.num_slices()), rng);

    fs::create_directories(out_dir);
    const fs::path log_path = fs::path(out_dir) / "training_log.csv";
    fs::remove(log_path);  // train() appends; a re-run starts clean
    const TrainResult result = train(model, contexts, cfg, log_path.string());

    const fs::path ckpt = fs::path(out_dir) / "model.ckpt";
    save_checkpoint(ckpt.string(), model);
    std::printf("trained %d epochs (best l_cons %.6g at epoch %d)\n", result.epochs_run,
                result.best_cons, result.best_epoch);

    write_run_manifest(out_dir, "train", cfg.seed, config_snapshot(cfg),
                       dataset_stamp(data_dir),
                       json{{"checkpoint", ckpt.string()}, {"training_log", log_path.string()}});
}

// ------------------------------------------------------------ cmd_generate

void cmd_generate(const std::string& checkpoint, const std::string& data_dir,
                  const std::string& direction_name, const std::string& out_dir) {
    const Direction dir = parse_direction(direction_name);
    const BgganModel model = load_checkpoint(checkpoint);
    const Cohort cohort = load_cohort(data_dir);
    const auto contexts = make_contexts(cohort);

    fs::create_directories(out_dir);
    const char* suffix = dir == Direction::sc2fc ? "fc" : "sc";
    json subjects = json::array();
    for (std::size_t s = 0; s < contexts.size(); ++s) {
        const Matrix m = infer(model, contexts[s], dir);
        const std::string name = "gen_" + cohort[s].id + "_" + suffix + ".csv";
        write_matrix_csv((fs::path(out_dir) / name).string(), m);
        subjects.push_back({{"id", cohort[s].id}, {"label", cohort[s].label}, {"file", name}});
    }
    write_json_file(fs::path(out_dir) / "gen_manifest.json",
                    json{{"schema_version", kManifestSchema},
                         {"direction", direction_name},
                         {"checkpoint", checkpoint},
                         {"subjects", subjects}});
    std::printf("generated %zu %s matrices in %s\n", contexts.size(), suffix, out_dir.c_str());

    write_run_manifest(out_dir, "generate", 0, json{{"direction", direction_name}},
                       dataset_stamp(data_dir),
                       json{{"gen_manifest", (fs::path(out_dir) / "gen_manifest.json").string()},
                            {"checkpoint", checkpoint}});
}

// ------------------------------------------------------------ cmd_evaluate

struct LabelledFeatures {
    std::vector<Vector> feats;
    std::vector<int> labels;
};

/// Trains a fresh softmax head on an 80/20 stratified split and scores the
/// held-out fifth. Two-class cohorts only; label 1 is "positive".
Metrics head_metrics(const LabelledFeatures& train_set, const LabelledFeatures& test_set,
                     int n_classes, std::uint64_t seed) {
    auto rng = make_rng(seed);
    ClassifierParams head =
        make_classifier(train_set.feats.at(0).size(), 64, n_classes, rng);
    std::vector<Param*> params = {&head.w1, &head.b1, &head.w2, &head.b2};

    const double weight = 1.0 / static_cast<double>(train_set.feats.size());
    for (int epoch = 0; epoch < 300; ++epoch) {
        for (Param* p : params) {
            p->grad.setZero();
        }
        for (std::size_t s = 0; s < train_set.feats.size(); ++s) {
            ClassifierCache cache;
            classifier_forward(train_set.feats[s], head, cache, false, 0.0, rng);
            classifier_backward(cache, head, train_set.labels[s], weight);
        }
        for (Param* p : params) {
            adam_step(*p, 0.01);
        }
    }

    ConfusionCounts counts{};
    for (std::size_t s = 0; s < test_set.feats.size(); ++s) {
        ClassifierCache cache;
        const Vector probs = classifier_forward(test_set.feats[s], head, cache, false, 0.0, rng);
        Eigen::Index pred = 0;
        probs.maxCoeff(&pred);
        const bool actual = test_set.labels[s] == 1;
        const bool predicted = pred == 1;
        if (actual && predicted) {
            ++counts.tp;
        } else if (!actual && predicted) {
            ++counts.fp;
        } else if (actual && !predicted) {
            ++counts.fn;
        } else {
            ++counts.tn;
        }
    }
    return metrics(counts);
}

void print_metrics_row(const std::string& name, const Metrics& m) {
    auto cell = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("undefined");
    };
    std::printf("%s: accuracy=%s recall=%s precision=%s f1=%s\n", name.c_str(),
                cell(m.accuracy).c_str(), cell(m.recall).c_str(), cell(m.precision).c_str(),
                cell(m.f1).c_str());
}

void cmd_evaluate(const std::string& checkpoint, const std::string& data_dir,
                  const std::string& out_dir, std::uint64_t seed) {
    const BgganModel model = load_checkpoint(checkpoint);
    const Cohort cohort = load_cohort(data_dir);
    const auto contexts = make_contexts(cohort);
    const int n_classes = class_count(cohort);
    if (n_classes != 2) {
        throw ValidationError("evaluate needs a two-class cohort, got " +
                              std::to_string(n_classes));
    }

    // latents from each domain's extractor; "fused" is their concatenation
    std::vector<Vector> lat_s, lat_f, lat_both;
    for (const SubjectContext& ctx : contexts) {
        const Tensor3& feats = ctx.subject->feats;
        ExtractorCache cache;
        const Matrix ms =
            extractor_forward(feats, ctx.adj_slices, ctx.basis, model.extractor_s, cache);
        ExtractorCache cache_f;
        const Matrix mf =
            extractor_forward(feats, ctx.adj_slices, ctx.basis, model.extractor_f, cache_f);
        Vector vs = Eigen::Map<const Vector>(ms.data(), ms.size());
        Vector vf = Eigen::Map<const Vector>(mf.data(), mf.size());
        Vector vb(vs.size() + vf.size());
        vb << vs, vf;
        lat_s.push_back(std::move(vs));
        lat_f.push_back(std::move(vf));
        lat_both.push_back(std::move(vb));
    }

    // stratified 80/20: within each label, every fifth subject is held out
    std::vector<std::size_t> test_idx;
    std::map<int, int> per_label;
    for (std::size_t s = 0; s < cohort.size(); ++s) {
        const int k = per_label[cohort[s].label]++;
        if (k % 5 == 4) {
            test_idx.push_back(s);
        }
    }
    if (test_idx.empty()) {
        throw ValidationError("cohort too small to hold out a test fifth");
    }
    const std::set<std::size_t> held(test_idx.begin(), test_idx.end());

    auto split = [&](const std::vector<Vector>& all) {
        std::pair<LabelledFeatures, LabelledFeatures> out;
        for (std::size_t s = 0; s < all.size(); ++s) {
            LabelledFeatures& side = held.count(s) ? out.second : out.first;
            side.feats.push_back(all[s]);
            side.labels.push_back(cohort[s].label);
        }
        return out;
    };

    fs::create_directories(out_dir);
    std::vector<std::pair<std::string, Metrics>> rows;
    for (const auto& [name, lat] : std::initializer_list<
             std::pair<std::string, const std::vector<Vector>*>>{
             {"structural", &lat_s}, {"functional", &lat_f}, {"fused", &lat_both}}) {
        const auto [train_set, test_set] = split(*lat);
        const Metrics m = head_metrics(train_set, test_set, n_classes, seed);
        print_metrics_row(name, m);
        rows.emplace_back(name, m);
    }
    const fs::path csv = fs::path(out_dir) / "metrics.csv";
    write_metrics_csv(csv.string(), rows);

    write_run_manifest(out_dir, "evaluate", seed, json::object(), dataset_stamp(data_dir),
                       json{{"metrics", csv.string()}, {"checkpoint", checkpoint}});
}

// ------------------------------------------------------------- cmd_analyze

struct MatrixGroup {
    std::vector<Matrix> matrices;
    std::vector<int> labels;
    std::vector<std::string> ids;
    Domain domain = Domain::structural;
};

/// Accepts either a generated-output directory (gen_manifest.json) or a
/// cohort directory (manifest + sc/fc csv files, `domain_pick` choosing one).
MatrixGroup load_matrix_group(const std::string& dir, const std::string& domain_pick) {
    MatrixGroup g;
    if (fs::exists(fs::path(dir) / "gen_manifest.json")) {
        const json m = read_json_file((fs::path(dir) / "gen_manifest.json").string());
        const Direction d = parse_direction(m.at("direction").get<std::string>());
        g.domain = d == Direction::sc2fc ? Domain::functional : Domain::structural;
        for (const json& s : m.at("subjects")) {
            g.ids.push_back(s.at("id").get<std::string>());
            g.labels.push_back(s.at("label").get<int>());
            g.matrices.push_back(
                read_matrix_csv((fs::path(dir) / s.at("file").get<std::string>()).string()));
        }
        return g;
    }
    const Cohort cohort = load_cohort(dir);
    g.domain = domain_pick == "fc" ? Domain::functional : Domain::structural;
    for (const Subject& s : cohort) {
        g.ids.push_back(s.id);
        g.labels.push_back(s.label);
        g.matrices.push_back(g.domain == Domain::functional ? s.fc : s.sc);
    }
    return g;
}

std::vector<EdgeStat> group_ttests(const MatrixGroup& g) {
    std::vector<Matrix> a, b;
    std::set<int> labels(g.labels.begin(), g.labels.end());
    if (labels.size() != 2) {
        throw ValidationError("t-tests need exactly two classes, got " +
                              std::to_string(labels.size()));
    }
    const int first = *labels.begin();
    for (std::size_t s = 0; s < g.matrices.size(); ++s) {
        (g.labels[s] == first ? a : b).push_back(g.matrices[s]);
    }
    return edge_ttests(a, b);
}

void cmd_analyze(const std::vector<std::string>& dirs, const std::string& mode,
                 const std::string& out_dir, const std::string& domain_pick,
                 std::optional<double> threshold, double alpha, int top_k) {
    fs::create_directories(out_dir);
    json artifacts;

    if (mode == "count") {
        const fs::path csv = fs::path(out_dir) / "connection_counts.csv";
        std::ofstream out(csv);
        out << "source,id,label,count\n";
        for (const std::string& dir : dirs) {
            const MatrixGroup g = load_matrix_group(dir, domain_pick);
            const double thr =
                threshold ? *threshold : (g.domain == Domain::functional ? 0.3 : 0.1);
            std::map<int, std::pair<double, int>> by_label;
            for (std::size_t s = 0; s < g.matrices.size(); ++s) {
                const long c = count_connections(g.matrices[s], thr);
                out << dir << ',' << g.ids[s] << ',' << g.labels[s] << ',' << c << '\n';
                by_label[g.labels[s]].first += static_cast<double>(c);
                by_label[g.labels[s]].second += 1;
            }
            for (const auto& [label, acc] : by_label) {
                std::printf("%s label=%d mean connections %.2f (threshold %g)\n", dir.c_str(),
                            label, acc.first / acc.second, thr);
            }
        }
        artifacts["counts"] = csv.string();
    } else if (mode == "ttest") {
        if (dirs.size() != 1) {
            throw ValidationError("ttest mode takes exactly one directory");
        }
        const MatrixGroup g = load_matrix_group(dirs[0], domain_pick);
        const std::vector<EdgeStat> stats = group_ttests(g);
        const TopAbnormal top = top_k_abnormal(stats, top_k, alpha);

        const fs::path all_csv = fs::path(out_dir) / "edge_stats.csv";
        const fs::path top_csv = fs::path(out_dir) / "top_edges.csv";
        write_edge_stats_csv(all_csv.string(), stats);
        write_edge_stats_csv(top_csv.string(), top.edges);
        std::printf("%ld significant edges at alpha %g; wrote top %zu\n",
                    top.total_significant, alpha, top.edges.size());
        artifacts["edge_stats"] = all_csv.string();
        artifacts["top_edges"] = top_csv.string();
    } else if (mode == "recurrence") {
        if (dirs.size() < 2) {
            throw ValidationError("recurrence mode needs at least two directories");
        }
        std::vector<std::vector<EdgeStat>> per_dir;
        for (const std::string& dir : dirs) {
            const MatrixGroup g = load_matrix_group(dir, domain_pick);
            per_dir.push_back(top_k_abnormal(group_ttests(g), top_k, alpha).edges);
        }
        const Recurrence rec = cross_experiment_recurrence(per_dir);
        const fs::path csv = fs::path(out_dir) / "recurrence.csv";
        write_recurrence_csv(csv.string(), rec);
        std::printf("%zu distinct edges across %zu experiments\n", rec.edges.size(),
                    dirs.size());
        artifacts["recurrence"] = csv.string();
    } else {
        throw ValidationError("mode must be count, ttest or recurrence, got '" + mode + "'");
    }

    json dataset = json::array();
    for (const std::string& dir : dirs) {
        dataset.push_back(dataset_stamp(dir));
    }
    write_run_manifest(out_dir, "analyze", 0,
                       json{{"mode", mode},
                            {"domain", domain_pick},
                            {"alpha", alpha},
                            {"top_k", top_k}},
                       dataset, artifacts);
}

// --------------------------------------------------------------- cmd_sweep

void cmd_sweep(const std::string& data_dir, const std::string& grid_file,
               const std::string& out_dir, const ConfigOverrides& flags) {
    const json grid = read_json_file(grid_file);
    std::vector<double> rates;
    std::vector<int> layer_counts;
    int epochs = 10;
    json base = json::object();
    for (const auto& [key, value] : grid.items()) {
        try {
            if (key == "lr_gen") {
                rates = value.get<std::vector<double>>();
            } else if (key == "inner_layers") {
                layer_counts = value.get<std::vector<int>>();
            } else if (key == "epochs") {
                epochs = value.get<int>();
            } else if (key == "config") {
                base = value;
            } else {
                throw ValidationError(grid_file + ": unknown grid key '" + key + "'");
            }
        } catch (const json::exception&) {
            throw ValidationError(grid_file + ": bad value for '" + key + "'");
        }
    }
    if (rates.empty() || layer_counts.empty()) {
        throw ValidationError(grid_file + ": grid needs lr_gen and inner_layers lists");
    }

    const Cohort cohort = load_cohort(data_dir);
    const auto contexts = make_contexts(cohort);
    fs::create_directories(out_dir);

    const fs::path csv = fs::path(out_dir) / "sweep.csv";
    std::ofstream out(csv);
    out << "lr_gen,inner_layers,l_cons,l_recon,total\n";
    TrainConfig cfg_for_manifest;
    for (const double lr : rates) {
        for (const int layers : layer_counts) {
            TrainConfig cfg;
            cfg.n_rois = 0;
            if (!base.empty()) {
                apply_config_json(cfg, base, grid_file);
            }
            flags.apply(cfg);
            cfg.lr_gen = lr;
            cfg.inner_layers = layers;
            cfg.max_epochs = epochs;
            if (cfg.balancer_cutoff > epochs) {
                cfg.balancer_cutoff = epochs;
            }
            if (cfg.n_rois == 0) {
                cfg.n_rois = static_cast<int>(cohort.at(0).sc.rows());
            }
            if (cfg.n_classes < class_count(cohort)) {
                cfg.n_classes = class_count(cohort);
            }
            cfg.validate();
            cfg_for_manifest = cfg;

            auto rng = make_rng(cfg.seed);
            BgganModel model = make_model(cfg, static_cast<int>(cohort[0].feats.cols()),
                                          static_cast<int>(cohort[0].feats.num_slices()), rng);
            const TrainResult result = train(model, contexts, cfg, "");
            const LossReport& last = result.reports.back();
            char row[160];
            std::snprintf(row, sizeof(row), "%.17g,%d,%.17g,%.17g,%.17g\n", lr, layers,
                          last.l_cons, last.l_recon, last.total);
            out << row;
            std::printf("lr=%g layers=%d  l_cons=%.6g total=%.6g\n", lr, layers, last.l_cons,
                        last.total);
        }
    }
    out.close();

    write_run_manifest(out_dir, "sweep", cfg_for_manifest.seed,
                       json{{"lr_gen", rates}, {"inner_layers", layer_counts},
                            {"epochs", epochs}},
                       dataset_stamp(data_dir), json{{"sweep", csv.string()}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bidirectional brain-network GAN toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker-thread cap")->capture_default_str();

    std::function<void()> action;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    std::string synth_spec, synth_out;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--spec-file", synth_spec, "cohort description (json)")->required();
    synth->add_option("--out-dir", synth_out)->required();
    synth->add_option("--seed", synth_seed, "override the spec's seed");
    synth->callback([&] { action = [&] { cmd_synth(synth_spec, synth_out, synth_seed); }; });

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a cohort");
    std::string train_data, train_config, train_out;
    ConfigOverrides train_flags;
    train_cmd->add_option("--data-dir", train_data)->required();
    train_cmd->add_option("--config-file", train_config, "flat json config");
    train_cmd->add_option("--out-dir", train_out)->required();
    train_flags.add_flags(train_cmd);
    train_cmd->callback(
        [&] { action = [&] { cmd_train(train_data, train_config, train_out, train_flags); }; });

    // generate
    auto* gen = app.add_subcommand("generate", "run cross-domain inference");
    std::string gen_ckpt, gen_data, gen_dir, gen_out;
    gen->add_option("--checkpoint", gen_ckpt)->required();
    gen->add_option("--data-dir", gen_data)->required();
    gen->add_option("--direction", gen_dir, "sc2fc or fc2sc")->required();
    gen->add_option("--out-dir", gen_out)->required();
    gen->callback([&] { action = [&] { cmd_generate(gen_ckpt, gen_data, gen_dir, gen_out); }; });

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "classification from extracted latents");
    std::string eval_ckpt, eval_data, eval_out;
    std::uint64_t eval_seed = 1;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data-dir", eval_data)->required();
    eval->add_option("--out-dir", eval_out)->required();
    eval->add_option("--seed", eval_seed)->capture_default_str();
    eval->callback(
        [&] { action = [&] { cmd_evaluate(eval_ckpt, eval_data, eval_out, eval_seed); }; });

    // analyze
    auto* ana = app.add_subcommand("analyze", "count / ttest / recurrence reports");
    std::vector<std::string> ana_dirs;
    std::string ana_mode, ana_out, ana_domain = "sc";
    std::optional<double> ana_threshold;
    double ana_alpha = 0.05;
    int ana_topk = 30;
    ana->add_option("dirs", ana_dirs, "generated-output or cohort directories")->required();
    ana->add_option("--mode", ana_mode, "count, ttest or recurrence")->required();
    ana->add_option("--out-dir", ana_out)->required();
    ana->add_option("--domain", ana_domain, "sc or fc when reading a cohort dir")
        ->capture_default_str();
    ana->add_option("--threshold", ana_threshold, "connection threshold for count mode");
    ana->add_option("--alpha", ana_alpha)->capture_default_str();
    ana->add_option("--top-k", ana_topk)->capture_default_str();
    ana->callback([&] {
        action = [&] {
            cmd_analyze(ana_dirs, ana_mode, ana_out, ana_domain, ana_threshold, ana_alpha,
                        ana_topk);
        };
    });

    // sweep
    auto* sweep = app.add_subcommand("sweep", "learning-rate x layer-count grid");
    std::string sweep_data, sweep_grid, sweep_out;
    ConfigOverrides sweep_flags;
    sweep->add_option("--data-dir", sweep_data)->required();
    sweep->add_option("--grid-file", sweep_grid)->required();
    sweep->add_option("--out-dir", sweep_out)->required();
    sweep_flags.add_flags(sweep);
    sweep->callback([&] {
        action = [&] { cmd_sweep(sweep_data, sweep_grid, sweep_out, sweep_flags); };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: usage\n%s\n", e.what());
        return 2;
    }

    Eigen::setNbThreads(threads);
    try {
        action();
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: validation\n%s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: numerical\n%s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal\n%s\n", e.what());
        return 4;
    }
    return 0;
}
