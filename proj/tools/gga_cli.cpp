// gga: command-line front end for training, attacks, CSM features,
// detector fitting, scoring, evaluation and landscape probes.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gga/attacks.hpp"
#include "gga/container.hpp"
#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/features.hpp"
#include "gga/landscape.hpp"
#include "gga/loda.hpp"
#include "gga/metrics.hpp"
#include "gga/nn.hpp"
#include "gga/saliency.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gga;

namespace {

constexpr const char* kVersion = "0.1.0";

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return 1;
        case ErrorKind::Data: return 2;
        case ErrorKind::Numerical: return 3;
    }
    return 2;
}

struct Session {
    std::uint64_t seed = 0;
    std::string config;
    std::string out_dir;
    json inputs = json::object();
    json outputs = json::object();
    json results = json::object();

    fs::path output(const std::string& path) const {
        fs::path p(path);
        if (p.is_relative() && !out_dir.empty()) p = fs::path(out_dir) / p;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p;
    }
    void record_input(const std::string& path) {
        if (!path.empty() && fs::is_regular_file(path)) inputs[path] = hex64(fnv1a64(read_file(path)));
    }
    void record_output(const fs::path& path) { outputs[path.string()] = hex64(fnv1a64(read_file(path))); }
};

bool is_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[8] = {};
    in.read(magic, 8);
    return in.gcount() == 8 && std::string(magic, 8) == std::string("GGACNTR\0", 8);
}

/// Container, CSV ("label,f1,...") or IDX images with optional IDX labels.
LabeledDataset load_data(Session& s, const std::string& path, const std::string& labels,
                         std::vector<bool>* success = nullptr) {
    if (!fs::exists(path)) throw data_error("input file not found: " + path);
    s.record_input(path);
    s.record_input(labels);
    if (is_container(path)) return load_dataset(path, success);
    if (fs::path(path).extension() == ".csv") return load_csv(path, 0.0, 1.0);
    return load_idx(path, labels.empty() ? std::nullopt : std::optional<fs::path>(labels));
}

LabeledDataset limit(const LabeledDataset& d, std::size_t n) {
    if (n == 0 || n >= d.size()) return d;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return subset(d, idx);
}

Model load_model_input(Session& s, const std::string& path) {
    s.record_input(path);
    return load_model(path);
}

struct DetectorBundle {
    LodaDetector detector;
    CsmOptions csm;
};

DetectorBundle load_detector_input(Session& s, const std::string& path) {
    s.record_input(path);
    const Container c = load_container(path, "loda");
    DetectorBundle b{LodaDetector::from_container(c), {}};
    b.csm.top_n = c.meta.value("csm_top_n", std::size_t{0});
    b.csm.loss = parse_loss_kind(c.meta.value("csm_loss", std::string("sce")));
    return b;
}

bool has_key(const std::string& spec, const std::string& key) { return spec.find(":" + key + "=") != std::string::npos; }

void write_text(Session& s, const fs::path& path, const std::string& text) {
    write_file_atomic(path, text);
    s.record_output(path);
}

std::vector<std::size_t> parse_shape(const std::string& text) {
    std::vector<std::size_t> shape;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            shape.push_back(std::stoul(part));
        } catch (const std::exception&) {
            throw usage_error("bad shape '" + text + "'");
        }
    }
    if (shape.empty()) throw usage_error("empty shape");
    return shape;
}

// Flat "key = value" lines; '#' starts a comment. Values fill options the
// command line left unset.
void apply_config(const std::string& path, CLI::App& app, CLI::App& sub) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file " + path);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t\r"), e = v.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw usage_error(path + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (!opt) opt = app.get_option_no_throw("--" + key);
        if (!opt) throw usage_error(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (opt->count() > 0) continue;
        std::stringstream vs(value);
        std::string item;
        if (opt->get_expected_max() > 1) {
            while (std::getline(vs, item, ',')) opt->add_result(trim(item));
        } else {
            opt->add_result(value);
        }
        opt->run_callback();
    }
}

json option_values(const CLI::App& app) {
    json j = json::object();
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_name().empty() || opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        if (opt->count() > 0) {
            const auto& r = opt->results();
            j[name] = r.size() == 1 ? json(r.front()) : json(r);
        } else if (!opt->get_default_str().empty()) {
            j[name] = opt->get_default_str();
        }
    }
    return j;
}

void write_manifest(Session& s, const fs::path& primary, const std::string& command, const CLI::App& app,
                    const CLI::App& sub, int argc, char** argv) {
    json m;
    m["tool"] = "gga";
    m["version"] = kVersion;
    m["container_version"] = kContainerVersion;
    m["command"] = command;
    m["argv"] = std::vector<std::string>(argv, argv + argc);
    m["seed"] = s.seed;
    if (!s.config.empty()) m["config"] = s.config;
    m["options"] = option_values(sub);
    m["global_options"] = option_values(app);
    m["inputs"] = s.inputs;
    m["outputs"] = s.outputs;
    m["results"] = s.results;
    const fs::path path = primary.string() + ".manifest.json";
    write_file_atomic(path, m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data, labels, test, test_labels, arch = "auto", activation = "rectifier", output;
    std::vector<std::size_t> hidden;
    std::size_t epochs = 10, batch = 128, max_shift = 0;
    double lr = 0.1, momentum = 0.9, weight_decay = 0.0, beta = kDefaultSoftplusBeta;
};

fs::path run_train(Session& s, const TrainArgs& a) {
    const LabeledDataset data = load_data(s, a.data, a.labels);
    if (data.empty()) throw data_error("training set is empty");
    std::size_t classes = 0;
    for (int y : data.labels) {
        if (y < 0) throw data_error("training set contains unlabeled samples");
        classes = std::max(classes, static_cast<std::size_t>(y) + 1);
    }
    const Shape& shape = data.inputs.front().shape();
    std::string arch = a.arch == "auto" ? (shape.size() == 3 ? "cnn" : "mlp") : a.arch;
    Model model;
    if (arch == "cnn") {
        if (shape.size() != 3) throw usage_error("cnn needs [C,H,W] inputs");
        model = make_cnn(shape, classes, a.hidden.empty() ? 100 : a.hidden.front());
    } else if (arch == "mlp") {
        model = make_mlp(shape_size(shape), a.hidden.empty() ? std::vector<std::size_t>{64} : a.hidden, classes);
    } else {
        throw usage_error("unknown architecture '" + a.arch + "' (cnn, mlp)");
    }
    LabeledDataset flat = data;
    if (arch == "mlp")
        for (auto& x : flat.inputs) x = x.reshaped({x.size()});
    model.init_parameters(s.seed);
    TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.momentum = a.momentum;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.seed = s.seed;
    cfg.weight_decay = a.weight_decay;
    cfg.max_shift = arch == "cnn" ? a.max_shift : 0;
    TrainResult r = train(model, flat, cfg, [](const EpochStats& e) {
        std::printf("epoch %zu lr %.5f loss %.5f train_acc %.4f\n", e.epoch, e.learning_rate, e.mean_loss, e.accuracy);
        std::fflush(stdout);
    });
    Model out = parse_activation_mode(a.activation) == ActivationMode::Softplus
                    ? swap_activations(r.model, ActivationMode::Softplus, a.beta)
                    : r.model;
    s.results["train_accuracy"] = r.history.empty() ? 0.0 : r.history.back().accuracy;
    if (!a.test.empty()) {
        LabeledDataset test = load_data(s, a.test, a.test_labels);
        if (arch == "mlp")
            for (auto& x : test.inputs) x = x.reshaped({x.size()});
        const double acc = accuracy(out, test);
        std::printf("test_accuracy %.4f\n", acc);
        s.results["test_accuracy"] = acc;
    }
    const fs::path path = s.output(a.output);
    save_model(path, out);
    s.record_output(path);
    return path;
}

struct AttackArgs {
    std::string model, data, labels, spec = "pgd", output;
    std::size_t limit = 0;
    bool successful_only = false;
};

fs::path run_attack_cmd(Session& s, const AttackArgs& a) {
    AttackSpec spec = parse_attack_spec(a.spec);
    const Model model = load_model_input(s, a.model);
    const LabeledDataset data = limit(load_data(s, a.data, a.labels), a.limit);
    if (!has_key(a.spec, "seed")) spec.cfg.seed = s.seed;
    if (!has_key(a.spec, "lo")) spec.cfg.clip_lo = data.domain_lo;
    if (!has_key(a.spec, "hi")) spec.cfg.clip_hi = data.domain_hi;
    spec.cfg.validate();
    const AttackBatch batch = run_attack_batch(model, data, spec);
    const auto ok = std::count(batch.success.begin(), batch.success.end(), true);
    std::printf("attack %s: %ld of %zu successful\n", spec.kind.c_str(), static_cast<long>(ok), data.size());
    s.results["successful"] = ok;
    s.results["attempted"] = data.size();
    const json provenance{{"attack", a.spec}, {"kind", spec.kind}, {"seed", spec.cfg.seed},
                          {"epsilon", spec.cfg.epsilon}, {"model_hash", s.inputs[a.model]}};
    const fs::path path = s.output(a.output);
    if (a.successful_only) {
        save_dataset(path, successful_only(batch), provenance);
    } else {
        save_dataset(path, batch.adversarial, provenance, &batch.success);
    }
    s.record_output(path);
    return path;
}

struct CsmArgs {
    std::string model, data, labels, loss = "sce", output, matrices, pgm;
    std::size_t top_n = 0, limit = 0, index = 0;
};

fs::path run_csm(Session& s, const CsmArgs& a) {
    const Model model = load_model_input(s, a.model);
    const LabeledDataset data = limit(load_data(s, a.data, a.labels), a.limit);
    const CsmOptions opts{a.top_n, parse_loss_kind(a.loss)};
    const auto maps = csm_batch(model, data.inputs, opts);
    std::ostringstream feats, mats;
    write_features_csv_header(feats);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        write_features_csv_row(feats, features(maps[i]), data.labels[i], data.tag);
        if (!a.matrices.empty()) {
            mats << "# sample " << i << "\n";
            write_csm_csv(mats, maps[i]);
        }
    }
    const fs::path path = s.output(a.output);
    write_text(s, path, feats.str());
    if (!a.matrices.empty()) write_text(s, s.output(a.matrices), mats.str());
    if (!a.pgm.empty()) {
        if (a.index >= maps.size()) throw usage_error("--index is past the end of the dataset");
        std::ostringstream img;
        write_csm_pgm(img, maps[a.index]);
        write_text(s, s.output(a.pgm), img.str());
    }
    std::printf("csm: %zu samples\n", maps.size());
    return path;
}

struct FitArgs {
    std::string model, data, labels, loss = "sce", output;
    std::size_t projections = 100, bins = 100, top_n = 0, limit = 0;
    bool include_softmax = false, no_standardize = false;
    double tpr = 0.95;
};

fs::path run_fit(Session& s, const FitArgs& a) {
    const Model model = load_model_input(s, a.model);
    const LabeledDataset data = limit(load_data(s, a.data, a.labels), a.limit);
    const CsmOptions opts{a.top_n, parse_loss_kind(a.loss)};
    const auto maps = csm_batch(model, data.inputs, opts);
    std::vector<GgaFeatureVector> feats;
    for (std::size_t i = 0; i < maps.size(); ++i)
        if (static_cast<int>(maps[i].predicted_class()) == data.labels[i]) feats.push_back(features(maps[i]));
    LodaOptions lo;
    lo.projections = a.projections;
    lo.bins = a.bins;
    lo.seed = s.seed;
    lo.standardize = !a.no_standardize;
    lo.include_softmax = a.include_softmax;
    LodaDetector det = LodaDetector::fit(feats, lo);
    std::vector<double> scores;
    for (const auto& f : feats) scores.push_back(det.score(f));
    det.set_threshold(calibrate_threshold(scores, a.tpr));
    Container c = det.to_container();
    c.meta["csm_top_n"] = a.top_n;
    c.meta["csm_loss"] = to_string(opts.loss);
    c.meta["tpr"] = a.tpr;
    const fs::path path = s.output(a.output);
    save_container(path, c);
    s.record_output(path);
    std::printf("detector: %zu training vectors, threshold %.6f\n", feats.size(), det.threshold());
    s.results["training_vectors"] = feats.size();
    s.results["threshold"] = det.threshold();
    return path;
}

struct DetectArgs {
    std::string model, detector, data, labels, output;
    std::size_t limit = 0;
};

fs::path run_detect(Session& s, const DetectArgs& a) {
    const Model model = load_model_input(s, a.model);
    const DetectorBundle b = load_detector_input(s, a.detector);
    const LabeledDataset data = limit(load_data(s, a.data, a.labels), a.limit);
    const auto maps = csm_batch(model, data.inputs, b.csm);
    std::ostringstream out;
    out.precision(17);
    out << "index,label,predicted,score,flagged\n";
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const double score = b.detector.score(features(maps[i]));
        const bool flag = b.detector.flags(score);
        flagged += flag;
        out << i << ',' << data.labels[i] << ',' << maps[i].predicted_class() << ',' << score << ',' << flag << '\n';
    }
    const fs::path path = s.output(a.output);
    write_text(s, path, out.str());
    std::printf("detect: %zu of %zu flagged\n", flagged, maps.size());
    s.results["flagged"] = flagged;
    return path;
}

struct EvalArgs {
    std::string model, detector, clean, clean_labels, scorer = "gga", output, table;
    std::vector<std::string> negatives;
    std::size_t limit = 0;
    double tpr = 0.95;
    bool per_source = false;
};

fs::path run_eval(Session& s, const EvalArgs& a) {
    const Model model = load_model_input(s, a.model);
    std::optional<DetectorBundle> b;
    SampleScorer scorer;
    if (a.scorer == "gga") {
        if (a.detector.empty()) throw usage_error("--detector is required with the gga scorer");
        b = load_detector_input(s, a.detector);
        scorer = gga_scorer(model, b->detector, b->csm);
    } else if (a.scorer == "msp") {
        scorer = msp_scorer(model);
    } else {
        throw usage_error("unknown scorer '" + a.scorer + "' (gga, msp)");
    }
    const LabeledDataset clean = limit(load_data(s, a.clean, a.clean_labels), a.limit);
    std::map<std::string, LabeledDataset> bad;
    json sources = json::object();
    for (const std::string& item : a.negatives) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw usage_error("--neg expects tag=path, got '" + item + "'");
        const std::string tag = item.substr(0, eq), path = item.substr(eq + 1);
        std::vector<bool> success;
        LabeledDataset d = load_data(s, path, "", &success);
        if (!success.empty()) {
            AttackBatch tmp;
            tmp.adversarial = d;
            tmp.success = success;
            d = successful_only(tmp);
        }
        d.tag = tag;
        bad[tag] = limit(d, a.limit);
        if (is_container(path)) {
            const Container c = load_container(path, "dataset");
            sources[tag] = c.meta.value("provenance", json(path));
        } else {
            sources[tag] = path;
        }
    }
    if (bad.empty()) throw usage_error("eval needs at least one --neg tag=path");
    DetectionReport rep = evaluate(model, scorer, clean, bad, EvalOptions{a.tpr, a.per_source});
    rep.metadata["model_hash"] = s.inputs[a.model];
    if (b) rep.metadata["detector_hash"] = s.inputs[a.detector];
    rep.metadata["scorer"] = a.scorer;
    rep.metadata["sources"] = sources;
    rep.metadata["seed"] = s.seed;
    for (const auto& tag : rep.skipped) std::fprintf(stderr, "warning: no samples for '%s', skipped\n", tag.c_str());
    const fs::path path = s.output(a.output);
    write_text(s, path, rep.to_json().dump(2) + "\n");
    if (!a.table.empty()) write_text(s, s.output(a.table), rep.table_csv());
    std::printf("%s", rep.table_csv().c_str());
    for (const auto& r : rep.rows) std::printf("%s n=%zu tnr=%.2f auroc=%.2f\n", r.tag.c_str(), r.count, r.tnr, r.auroc);
    return path;
}

struct LandscapeArgs {
    std::string mode = "zeta", model, data, labels, klass = "predicted", spec = "pgd", output;
    std::vector<double> sigmas = kDefaultSigmaSweep;
    std::size_t injections = 1000, limit = 0, index = 0, points = 41;
    double span = 2.0;
};

fs::path run_landscape(Session& s, const LandscapeArgs& a) {
    const Model model = load_model_input(s, a.model);
    const LabeledDataset data = limit(load_data(s, a.data, a.labels), a.limit);
    std::ostringstream out;
    out.precision(17);
    if (a.mode == "zeta") {
        if (a.klass != "predicted" && a.klass != "true") throw usage_error("--class must be predicted or true");
        out << "sample,label,predicted,correct,sigma,n,undefined,q05,q25,median,q75,q95,mean\n";
        for (std::size_t i = 0; i < data.size(); ++i) {
            const std::size_t p = predict(model, data.inputs[i]);
            const int y = data.labels[i];
            if (a.klass == "true" && y < 0) throw data_error("sample " + std::to_string(i) + " has no label");
            const std::size_t cls = a.klass == "true" ? static_cast<std::size_t>(y) : p;
            for (double sigma : a.sigmas) {
                const ZetaSample z = zeta_stats(model, data.inputs[i], cls, sigma, a.injections, mix_seed(s.seed, i));
                double mean = 0.0;
                for (double v : z.values) mean += v;
                mean /= static_cast<double>(z.values.size());
                out << i << ',' << y << ',' << p << ',' << (static_cast<int>(p) == y) << ',' << sigma << ','
                    << z.values.size() << ',' << z.undefined;
                for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) out << ',' << quantile(z.values, q);
                out << ',' << mean << '\n';
            }
        }
    } else if (a.mode == "surface") {
        if (a.index >= data.size()) throw usage_error("--index is past the end of the dataset");
        const Tensor& x = data.inputs[a.index];
        if (data.labels[a.index] < 0) throw data_error("surface sample needs a label");
        AttackSpec spec = parse_attack_spec(a.spec);
        if (!has_key(a.spec, "seed")) spec.cfg.seed = s.seed;
        spec.cfg.clip_lo = data.domain_lo;
        spec.cfg.clip_hi = data.domain_hi;
        const AttackResult r = run_attack(model, x, static_cast<std::size_t>(data.labels[a.index]), spec);
        if (!r.success) std::fprintf(stderr, "warning: attack on sample %zu did not succeed\n", a.index);
        Tensor delta(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) delta[i] = r.x_adv[i] - x[i];
        const double eps = spec.cfg.epsilon;
        const auto axis = linspace(-a.span * eps, a.span * eps, a.points);
        const SurfaceGrid g = csm_surface(model, x, delta, axis, axis, s.seed, data.domain_lo, data.domain_hi);
        write_surface_csv(out, g);
        s.results["attack_success"] = r.success;
    } else {
        throw usage_error("unknown landscape mode '" + a.mode + "' (zeta, surface)");
    }
    const fs::path path = s.output(a.output);
    write_text(s, path, out.str());
    return path;
}

struct GenArgs {
    std::string kind = "blobs", shape = "1,28,28", output;
    std::size_t n = 1000, classes = 10, dim = 2;
    double separation = 10.0, gaussian_mean = 0.5;
};

fs::path run_gen(Session& s, const GenArgs& a) {
    LabeledDataset d;
    if (a.kind == "blobs") d = gen_blobs(a.n, a.classes, a.dim, a.separation, s.seed);
    else d = gen_noise_ood(parse_shape(a.shape), a.n, parse_noise_kind(a.kind), s.seed, a.gaussian_mean);
    const fs::path path = s.output(a.output);
    save_dataset(path, d, json{{"generator", a.kind}, {"seed", s.seed}});
    s.record_output(path);
    std::printf("gen %s: %zu samples\n", a.kind.c_str(), d.size());
    return path;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geometric gradient analysis: CSM features, LODA detection, attacks and landscape probes", "gga"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();
    Session s;
    if (const char* env = std::getenv("GGA_OUTPUT_DIR")) s.out_dir = env;
    app.add_option("--seed", s.seed, "Seed for every random component")->capture_default_str();
    app.add_option("--config", s.config, "Flat key = value file; explicit flags win");
    app.add_option("--out-dir", s.out_dir, "Directory for relative output paths (default $GGA_OUTPUT_DIR)");

    auto data_opts = [](CLI::App* sub, std::string& data, std::string& labels, const char* name = "--data") {
        sub->add_option(name, data, "Dataset: container, CSV or IDX images")->required();
        sub->add_option("--labels", labels, "IDX label file for IDX images");
    };

    TrainArgs ta;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a classifier");
    data_opts(train_cmd, ta.data, ta.labels);
    train_cmd->add_option("--test", ta.test, "Held-out dataset for test accuracy");
    train_cmd->add_option("--test-labels", ta.test_labels, "IDX labels of the test set");
    train_cmd->add_option("--arch", ta.arch, "cnn, mlp or auto")->capture_default_str();
    train_cmd->add_option("--hidden", ta.hidden, "Hidden widths (mlp) or dense width (cnn)");
    train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
    train_cmd->add_option("--lr", ta.lr)->capture_default_str();
    train_cmd->add_option("--momentum", ta.momentum)->capture_default_str();
    train_cmd->add_option("--batch", ta.batch)->capture_default_str();
    train_cmd->add_option("--weight-decay", ta.weight_decay)->capture_default_str();
    train_cmd->add_option("--max-shift", ta.max_shift, "Random translation augmentation in pixels")
        ->capture_default_str();
    train_cmd->add_option("--activation", ta.activation, "Saved activation: rectifier or softplus")
        ->capture_default_str();
    train_cmd->add_option("--beta", ta.beta, "Softplus sharpness")->capture_default_str();
    train_cmd->add_option("-o,--output", ta.output, "Model file")->required();

    AttackArgs aa;
    CLI::App* attack_cmd = app.add_subcommand("attack", "Attack a dataset; writes an adversarial container");
    attack_cmd->add_option("--model", aa.model)->required();
    data_opts(attack_cmd, aa.data, aa.labels);
    attack_cmd->add_option("--spec", aa.spec, "kind[:norm][:key=value...], e.g. pgd:linf:eps=0.3:iters=70")
        ->capture_default_str();
    attack_cmd->add_option("--limit", aa.limit, "Use the first N samples (0 = all)");
    attack_cmd->add_flag("--successful-only", aa.successful_only, "Keep only successful adversarials");
    attack_cmd->add_option("-o,--output", aa.output)->required();

    CsmArgs ca;
    CLI::App* csm_cmd = app.add_subcommand("csm", "Per-sample cosine-similarity matrices and features");
    csm_cmd->add_option("--model", ca.model)->required();
    data_opts(csm_cmd, ca.data, ca.labels);
    csm_cmd->add_option("--top-n", ca.top_n, "Top-N classes (0 = all)")->capture_default_str();
    csm_cmd->add_option("--loss", ca.loss, "Saliency loss: sce or mse")->capture_default_str();
    csm_cmd->add_option("--limit", ca.limit);
    csm_cmd->add_option("--matrices", ca.matrices, "CSV dump of every matrix");
    csm_cmd->add_option("--pgm", ca.pgm, "Grayscale image of the matrix at --index");
    csm_cmd->add_option("--index", ca.index);
    csm_cmd->add_option("-o,--output", ca.output, "Feature CSV")->required();

    FitArgs fa;
    CLI::App* fit_cmd = app.add_subcommand("fit-detector", "Fit LODA on features of correctly classified samples");
    fit_cmd->add_option("--model", fa.model)->required();
    data_opts(fit_cmd, fa.data, fa.labels);
    fit_cmd->add_option("--projections", fa.projections)->capture_default_str();
    fit_cmd->add_option("--bins", fa.bins)->capture_default_str();
    fit_cmd->add_option("--top-n", fa.top_n)->capture_default_str();
    fit_cmd->add_option("--loss", fa.loss)->capture_default_str();
    fit_cmd->add_option("--tpr", fa.tpr, "Threshold keeps this fraction of training scores")->capture_default_str();
    fit_cmd->add_option("--limit", fa.limit);
    fit_cmd->add_flag("--include-softmax", fa.include_softmax, "Append the softmax score as an 11th feature");
    fit_cmd->add_flag("--no-standardize", fa.no_standardize, "Skip z-scoring of features");
    fit_cmd->add_option("-o,--output", fa.output, "Detector file")->required();

    DetectArgs da;
    CLI::App* detect_cmd = app.add_subcommand("detect", "Score a dataset with a fitted detector");
    detect_cmd->add_option("--model", da.model)->required();
    detect_cmd->add_option("--detector", da.detector)->required();
    data_opts(detect_cmd, da.data, da.labels);
    detect_cmd->add_option("--limit", da.limit);
    detect_cmd->add_option("-o,--output", da.output, "Score CSV")->required();

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Detection report over clean and untrustworthy sets");
    eval_cmd->add_option("--model", ea.model)->required();
    eval_cmd->add_option("--detector", ea.detector);
    data_opts(eval_cmd, ea.clean, ea.clean_labels, "--clean");
    eval_cmd->add_option("--neg", ea.negatives, "tag=path, repeatable; attack containers keep successes only")
        ->required();
    eval_cmd->add_option("--scorer", ea.scorer, "gga or msp")->capture_default_str();
    eval_cmd->add_option("--tpr", ea.tpr)->capture_default_str();
    eval_cmd->add_flag("--per-source", ea.per_source, "Average per-tag AUROC/AUPR instead of pooling");
    eval_cmd->add_option("--limit", ea.limit, "First N samples of every set");
    eval_cmd->add_option("--table", ea.table, "Table CSV in report column order");
    eval_cmd->add_option("-o,--output", ea.output, "Report JSON")->required();

    LandscapeArgs la;
    CLI::App* land_cmd = app.add_subcommand("landscape", "zeta statistics or the CSM surface grid");
    land_cmd->add_option("--mode", la.mode, "zeta or surface")->capture_default_str();
    land_cmd->add_option("--model", la.model)->required();
    data_opts(land_cmd, la.data, la.labels);
    land_cmd->add_option("--sigmas", la.sigmas, "Noise levels")->capture_default_str();
    land_cmd->add_option("--injections", la.injections)->capture_default_str();
    land_cmd->add_option("--class", la.klass, "predicted or true")->capture_default_str();
    land_cmd->add_option("--limit", la.limit);
    land_cmd->add_option("--index", la.index, "Surface sample");
    land_cmd->add_option("--spec", la.spec, "Attack giving the surface direction")->capture_default_str();
    land_cmd->add_option("--points", la.points, "Grid points per axis")->capture_default_str();
    land_cmd->add_option("--span", la.span, "Grid half-width in multiples of epsilon")->capture_default_str();
    land_cmd->add_option("-o,--output", la.output)->required();

    GenArgs ga;
    CLI::App* gen_cmd = app.add_subcommand("gen", "Generate blobs or noise datasets");
    gen_cmd->add_option("--kind", ga.kind, "blobs, uniform or gaussian")->capture_default_str();
    gen_cmd->add_option("--n", ga.n)->capture_default_str();
    gen_cmd->add_option("--classes", ga.classes)->capture_default_str();
    gen_cmd->add_option("--dim", ga.dim)->capture_default_str();
    gen_cmd->add_option("--separation", ga.separation)->capture_default_str();
    gen_cmd->add_option("--shape", ga.shape, "Noise sample shape, e.g. 1,28,28")->capture_default_str();
    gen_cmd->add_option("--gaussian-mean", ga.gaussian_mean)->capture_default_str();
    gen_cmd->add_option("-o,--output", ga.output)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (const CLI::App* sub : app.get_subcommands()) target = sub;
        std::cout << target->help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        if (!s.config.empty()) {
            apply_config(s.config, app, *sub);
            s.inputs[s.config] = hex64(fnv1a64(read_file(s.config)));
        }
        const std::string name = sub->get_name();
        fs::path primary;
        if (name == "train") primary = run_train(s, ta);
        else if (name == "attack") primary = run_attack_cmd(s, aa);
        else if (name == "csm") primary = run_csm(s, ca);
        else if (name == "fit-detector") primary = run_fit(s, fa);
        else if (name == "detect") primary = run_detect(s, da);
        else if (name == "eval") primary = run_eval(s, ea);
        else if (name == "landscape") primary = run_landscape(s, la);
        else primary = run_gen(s, ga);
        write_manifest(s, primary, name, app, *sub, argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
