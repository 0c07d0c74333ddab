#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "geoaddr/checks.hpp"
#include "geoaddr/errors.hpp"
#include "geoaddr/features.hpp"
#include "geoaddr/geocode.hpp"
#include "geoaddr/graph.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/pretask.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

void PipelineConfig::apply_seed() {
    world.seed = seed;
    sample.seed = seed;
    pretrain.seed = seed;
    finetune.seed = seed;
}

namespace {

json weights_json(const TaskWeights& w) {
    return {{"mlm", w.mlm}, {"geo", w.geo}, {"htc", w.htc}, {"aet", w.aet}, {"finetune_geo", w.finetune_geo}};
}

void require_object(const json& j, const std::string& where, const std::set<std::string>& keys) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!keys.count(k)) throw ConfigError("unknown key " + where + "." + k);
}

// Keys a section may use: whatever the defaults serialize to.
template <class T>
void require_fields_of(const json& j, const std::string& where) {
    const json defaults = T{};
    std::set<std::string> keys;
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    require_object(j, where, keys);
}

}  // namespace

json to_json(const PipelineConfig& c) {
    const auto& p = c.pretrain;
    return {{"out_dir", c.out_dir.generic_string()},
            {"seed", c.seed},
            {"world", c.world},
            {"sample", {{"k", c.sample.k}, {"p", c.sample.p}, {"n_samples", c.n_samples}, {"shard_size", c.shard_size}}},
            {"model", c.model},
            {"pretrain",
             {{"steps", p.steps},
              {"batch_size", p.batch_size},
              {"lr", p.lr},
              {"weights", weights_json(p.weights)},
              {"dynamic_masking", p.dynamic_masking},
              {"linear_decay", p.linear_decay}}},
            {"finetune", {{"epochs", c.finetune.epochs}, {"batch_size", c.finetune.batch_size}, {"lr", c.finetune.lr}}},
            {"eval", {{"test_fraction", c.test_fraction}, {"acc_km", c.acc_km}}}};
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig c;
    require_object(j, "config", {"out_dir", "seed", "world", "sample", "model", "pretrain", "finetune", "eval"});
    try {
        c.out_dir = j.value("out_dir", c.out_dir.generic_string());
        c.seed = j.value("seed", c.seed);
        if (j.contains("world")) require_fields_of<WorldConfig>(j.at("world"), "world");
        if (j.contains("model")) require_fields_of<ModelConfig>(j.at("model"), "model");
        if (j.contains("world")) c.world = j.at("world").get<WorldConfig>();
        if (j.contains("sample")) {
            const auto& s = j.at("sample");
            require_object(s, "sample", {"k", "p", "n_samples", "shard_size"});
            c.sample.k = s.value("k", c.sample.k);
            c.sample.p = s.value("p", c.sample.p);
            c.n_samples = s.value("n_samples", c.n_samples);
            c.shard_size = s.value("shard_size", c.shard_size);
        }
        if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            require_object(p, "pretrain", {"steps", "batch_size", "lr", "weights", "dynamic_masking", "linear_decay"});
            c.pretrain.steps = p.value("steps", c.pretrain.steps);
            c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
            c.pretrain.lr = p.value("lr", c.pretrain.lr);
            c.pretrain.dynamic_masking = p.value("dynamic_masking", c.pretrain.dynamic_masking);
            c.pretrain.linear_decay = p.value("linear_decay", c.pretrain.linear_decay);
            if (p.contains("weights")) {
                const auto& w = p.at("weights");
                require_object(w, "pretrain.weights", {"mlm", "geo", "htc", "aet", "finetune_geo"});
                auto& t = c.pretrain.weights;
                t.mlm = w.value("mlm", t.mlm);
                t.geo = w.value("geo", t.geo);
                t.htc = w.value("htc", t.htc);
                t.aet = w.value("aet", t.aet);
                t.finetune_geo = w.value("finetune_geo", t.finetune_geo);
            }
        }
        if (j.contains("finetune")) {
            const auto& f = j.at("finetune");
            require_object(f, "finetune", {"epochs", "batch_size", "lr"});
            c.finetune.epochs = f.value("epochs", c.finetune.epochs);
            c.finetune.batch_size = f.value("batch_size", c.finetune.batch_size);
            c.finetune.lr = f.value("lr", c.finetune.lr);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            require_object(e, "eval", {"test_fraction", "acc_km"});
            c.test_fraction = e.value("test_fraction", c.test_fraction);
            c.acc_km = e.value("acc_km", c.acc_km);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

// The working directory is where results go, not what they are; leave it out.
std::string config_hash(const PipelineConfig& c) {
    json j = to_json(c);
    j.erase("out_dir");
    return io::fnv1a_hex(j.dump());
}

namespace {

// Hash of every regular file under the given paths, by relative name and content.
std::string dataset_hash(const fs::path& root, const std::vector<fs::path>& parts) {
    std::vector<fs::path> files;
    for (const auto& p : parts) {
        const fs::path full = root / p;
        if (fs::is_regular_file(full)) {
            files.push_back(full);
        } else if (fs::is_directory(full)) {
            for (const auto& e : fs::recursive_directory_iterator(full))
                if (e.is_regular_file()) files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += fs::relative(f, root).generic_string() + ":" + io::file_hash(f) + "\n";
    return io::fnv1a_hex(acc);
}

struct Split {
    std::vector<std::size_t> train, test;
};

// Deterministic shuffle, first (1 - test_fraction) of it for training.
Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x5917ULL));
    rng.shuffle(idx);
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n) * test_fraction));
    Split s;
    s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, n_test)));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, n_test)), idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

template <class T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

std::string part_name(std::size_t part, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "part-%05zu%s", part, ext);
    return buf;
}

Vocab load_vocab(const fs::path& path) { return Vocab::from_json(json::parse(io::read_text(path))); }

std::vector<PretrainSample> load_pretrain(const fs::path& dir) {
    std::vector<fs::path> parts;
    if (!fs::is_directory(dir)) throw FormatError("missing directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".jsonl") parts.push_back(e.path());
    std::sort(parts.begin(), parts.end());
    std::vector<PretrainSample> out;
    for (const auto& p : parts)
        io::for_each_jsonl(p, [&](const json& j, std::size_t) { out.push_back(pretrain_sample_from_json(j)); });
    return out;
}

int corpus_face(const WorldConfig& w) {
    const LatLon mid{(w.bbox.lat_min + w.bbox.lat_max) / 2.0, (w.bbox.lon_min + w.bbox.lon_max) / 2.0};
    return cell_from_latlon(mid, kPretrainCellLevel).face;
}

// Test addresses for AEP / AET: every address of the held-out POIs.
std::vector<NormalizedAddress> addresses_of(const World& w, const std::vector<std::size_t>& poi_idx) {
    std::vector<NormalizedAddress> out;
    for (std::size_t i : poi_idx) {
        const auto& a = w.pois.records()[i].addresses;
        out.insert(out.end(), a.begin(), a.end());
    }
    return out;
}

std::vector<AetCase> aet_cases(const std::vector<NormalizedAddress>& addrs, const Vocab& vocab, int max_len) {
    std::vector<AetCase> out;
    for (const auto& a : addrs) out.push_back({tokenize(a, vocab, max_len)});
    return out;
}

struct Context {
    PipelineConfig cfg;
    std::ostream& out;
    json outputs = json::object();
    json extra = json::object();

    fs::path path(const std::string& rel) const { return cfg.out_dir / rel; }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Address pre-training pipeline over a synthetic logistics world", "geoaddr"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Seed for every stage")->check(CLI::NonNegativeNumber);
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out-dir", out_dir, "Pipeline working directory");
    app.fallthrough();

    long steps = -1;
    double lr = -1.0;
    int batch = 0, epochs = -1;
    std::string checkpoint, head = "finetune";
    std::size_t n_samples = 0;
    bool skip_overfit = false;

    auto* gen_world = app.add_subcommand("gen-world", "Generate the synthetic world");
    auto* build_graph_cmd = app.add_subcommand("build-graph", "Build the heterogeneous graph");
    auto* sample_cmd = app.add_subcommand("sample", "Sample subgraphs");
    sample_cmd->add_option("--n-samples", n_samples, "Number of samples");
    auto* featurize_cmd = app.add_subcommand("featurize", "Compute structural features");
    auto* make_pretrain = app.add_subcommand("make-pretrain", "Build vocabulary and pre-training shards");
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Pre-train a model");
    pretrain_cmd->add_option("--steps", steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
    pretrain_cmd->add_option("--lr", lr, "Learning rate")->check(CLI::NonNegativeNumber);
    pretrain_cmd->add_option("--batch-size", batch, "Samples per step")->check(CLI::PositiveNumber);
    auto* finetune_cmd = app.add_subcommand("finetune-geo", "Fine-tune the 22-level geocoding head");
    auto* eval_geo = app.add_subcommand("eval-geo", "Evaluate geocoding");
    eval_geo->add_option("--head", head, "pretrain or finetune")->check(CLI::IsMember({"pretrain", "finetune"}));
    auto* eval_aep_cmd = app.add_subcommand("eval-aep", "Evaluate address entity prediction");
    auto* eval_aet_cmd = app.add_subcommand("eval-aet", "Fine-tune and evaluate entity tokenization");
    auto* embed_cmd = app.add_subcommand("embed", "Embed every canonical address");
    auto* cluster_cmd = app.add_subcommand("cluster-metrics", "Score embeddings by district");
    auto* verify_cmd = app.add_subcommand("verify", "Run the property suite");
    verify_cmd->add_flag("--skip-overfit", skip_overfit, "Skip the slow overfit criterion");
    for (auto* c : {finetune_cmd, eval_geo, eval_aep_cmd, eval_aet_cmd, embed_cmd})
        c->add_option("--checkpoint", checkpoint, "Checkpoint directory");
    for (auto* c : {finetune_cmd, eval_aet_cmd}) c->add_option("--epochs", epochs, "Fine-tuning epochs")->check(CLI::NonNegativeNumber);

    std::vector<const char*> argv{"geoaddr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return 2;
    }

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) {
            json j;
            try {
                j = json::parse(io::read_text(config_path));
            } catch (const json::exception& e) {
                throw ConfigError("cannot parse " + config_path + ": " + e.what());
            }
            cfg = config_from_json(j);
        }
        if (*seed_opt) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        cfg.apply_seed();
        if (n_samples) cfg.n_samples = n_samples;
        if (steps >= 0) cfg.pretrain.steps = steps;
        if (lr >= 0) cfg.pretrain.lr = lr;
        if (batch) cfg.pretrain.batch_size = batch;
        if (epochs >= 0) cfg.finetune.epochs = epochs;
        cfg.world.validate();
        cfg.sample.validate();

        Context ctx{cfg, out};
        const std::string chash = config_hash(cfg);
        auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        const int max_len = cfg.model.max_seq_len;
        auto ckpt_or = [&](const std::string& fallback) {
            return checkpoint.empty() ? ctx.path(fallback) : fs::path(checkpoint);
        };
        auto load_model = [&](const fs::path& dir) {
            if (!fs::exists(dir / "manifest.json")) throw FormatError("no checkpoint at " + dir.string());
            return Model::load(dir);
        };

        if (sub == gen_world) {
            const World w = generate_world(cfg.world);
            save_world(w, ctx.path("world"));
            ctx.outputs["world"] = ctx.path("world").generic_string();
            ctx.extra = {{"pois", w.pois.size()}, {"deliveries", w.deliveries.size()}, {"regions", w.tree.size()}};
        } else if (sub == build_graph_cmd) {
            const World w = load_world(ctx.path("world"));
            const HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
            save_graph(g, ctx.path("graph"));
            ctx.outputs["graph"] = ctx.path("graph").generic_string();
            ctx.extra = {{"nodes", g.num_nodes()}, {"edges", g.num_edges()}};
        } else if (sub == sample_cmd) {
            const HeteroGraph g = load_graph(ctx.path("graph"));
            const auto samples = sample_corpus(g, cfg.n_samples, cfg.sample);
            fs::remove_all(ctx.path("samples"));
            save_samples(samples, ctx.path("samples"), cfg.shard_size);
            ctx.outputs["samples"] = ctx.path("samples").generic_string();
            ctx.extra = {{"samples", samples.size()}};
        } else if (sub == featurize_cmd) {
            const HeteroGraph g = load_graph(ctx.path("graph"));
            const auto samples = load_samples(ctx.path("samples"));
            std::vector<SampleFeatures> feats;
            feats.reserve(samples.size());
            for (const auto& s : samples) feats.push_back(featurize(g, s));
            fs::remove_all(ctx.path("features"));
            save_features(feats, ctx.path("features"), cfg.shard_size);
            ctx.outputs["features"] = ctx.path("features").generic_string();
            ctx.extra = {{"samples", feats.size()}};
        } else if (sub == make_pretrain) {
            const World w = load_world(ctx.path("world"));
            const HeteroGraph g = load_graph(ctx.path("graph"));
            const auto samples = load_samples(ctx.path("samples"));
            const Vocab vocab = build_vocab(g, w.tree);
            io::write_text(ctx.path("vocab.json"), vocab.to_json().dump() + "\n");
            const auto pre = make_pretrain_corpus(g, w.tree, vocab, samples, cfg.seed, max_len);
            fs::remove_all(ctx.path("pretrain"));
            for (std::size_t part = 0, i = 0; i < pre.size(); ++part) {
                std::vector<json> rows;
                const std::string feat_part = "features/" + part_name(part, ".bin");
                for (std::size_t k = 0; k < cfg.shard_size && i < pre.size(); ++k, ++i)
                    rows.push_back(pretrain_sample_to_json(pre[i], feat_part));
                io::write_jsonl(ctx.path("pretrain") / part_name(part, ".jsonl"), rows);
            }
            ctx.outputs["vocab"] = ctx.path("vocab.json").generic_string();
            ctx.outputs["pretrain"] = ctx.path("pretrain").generic_string();
            ctx.extra = {{"samples", pre.size()}, {"vocab_size", vocab.size()}};
        } else if (sub == pretrain_cmd) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            const auto feats = load_features(ctx.path("features"));
            const auto pre = load_pretrain(ctx.path("pretrain"));
            const ModelConfig mc = fit_model_config(cfg.model, vocab, w.tree);
            Model model = Model::init(mc, cfg.seed);
            std::vector<json> log;
            pretrain(model, pre, feats, vocab, w.tree, cfg.pretrain, [&](const StepLog& s) {
                log.push_back({{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss.total}, {"mlm", s.loss.mlm},
                               {"geo", s.loss.geo}, {"htc", s.loss.htc}});
            });
            const fs::path dir = ctx.path("checkpoints/pretrain");
            fs::remove_all(dir);
            model.save(dir);
            io::write_jsonl(ctx.path("reports/pretrain_log.jsonl"), log);
            const HtcLabelSpace space(w.tree);
            std::vector<Example> ex;
            for (const auto& s : pre) ex.push_back(make_example(s, feats.at(s.features_index), space));
            const json metrics = to_json(measure_pretraining(model, ex, space));
            write_report(ctx.path("reports/pretrain.json"), "pretrain", metrics, chash, checkpoint_hash(dir),
                         dataset_hash(cfg.out_dir, {"pretrain", "features", "vocab.json"}));
            ctx.outputs["checkpoint"] = dir.generic_string();
            ctx.outputs["report"] = ctx.path("reports/pretrain.json").generic_string();
            ctx.extra = {{"steps", cfg.pretrain.steps}, {"metrics", metrics}};
        } else if (sub == finetune_cmd) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            Model model = load_model(ckpt_or("checkpoints/pretrain"));
            const auto cases = geo_cases(w);
            const Split split = split_indices(cases.size(), cfg.test_fraction, cfg.seed);
            const auto train = pick(cases, split.train);
            const auto losses = finetune_geo(model, train, vocab, cfg.finetune);
            const fs::path dir = ctx.path("checkpoints/finetune-geo");
            fs::remove_all(dir);
            model.save(dir);
            ctx.outputs["checkpoint"] = dir.generic_string();
            ctx.extra = {{"train_cases", train.size()}, {"epoch_losses", losses}};
        } else if (sub == eval_geo) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            const GeoHead h = head == "pretrain" ? GeoHead::Pretrain : GeoHead::Finetune;
            const fs::path dir = ckpt_or(h == GeoHead::Pretrain ? "checkpoints/pretrain" : "checkpoints/finetune-geo");
            const Model model = load_model(dir);
            const auto cases = geo_cases(w);
            const auto test = pick(cases, split_indices(cases.size(), cfg.test_fraction, cfg.seed).test);
            const auto res = eval_geocoding(test, model_geo_predictor(model, vocab, h, corpus_face(cfg.world)), cfg.acc_km);
            const json metrics = to_json(res);
            write_report(ctx.path("reports/geocoding.json"), "geocoding", metrics, chash, checkpoint_hash(dir),
                         dataset_hash(cfg.out_dir, {"world"}));
            ctx.outputs["report"] = ctx.path("reports/geocoding.json").generic_string();
            ctx.extra = {{"metrics", metrics}};
        } else if (sub == eval_aep_cmd) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            const fs::path dir = ckpt_or("checkpoints/pretrain");
            const Model model = load_model(dir);
            const auto split = split_indices(w.pois.size(), cfg.test_fraction, cfg.seed);
            Rng rng(derive_seed(cfg.seed, 0xaefULL));
            const auto cases = make_aep_cases(addresses_of(w, split.test), w.tree, rng);
            const json metrics = to_json(eval_aep(cases, model_aep_predictor(model, vocab, w.tree)));
            write_report(ctx.path("reports/aep.json"), "aep", metrics, chash, checkpoint_hash(dir),
                         dataset_hash(cfg.out_dir, {"world"}));
            ctx.outputs["report"] = ctx.path("reports/aep.json").generic_string();
            ctx.extra = {{"metrics", metrics}};
        } else if (sub == eval_aet_cmd) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            const fs::path dir = ckpt_or("checkpoints/pretrain");
            Model model = load_model(dir);
            const auto split = split_indices(w.pois.size(), cfg.test_fraction, cfg.seed);
            const auto train = aet_cases(addresses_of(w, split.train), vocab, max_len);
            const auto test = aet_cases(addresses_of(w, split.test), vocab, max_len);
            finetune_aet(model, train, cfg.finetune);
            const json metrics = to_json(eval_aet(test, model_aet_predictor(model)));
            write_report(ctx.path("reports/aet.json"), "aet", metrics, chash, checkpoint_hash(dir),
                         dataset_hash(cfg.out_dir, {"world"}));
            ctx.outputs["report"] = ctx.path("reports/aet.json").generic_string();
            ctx.extra = {{"metrics", metrics}};
        } else if (sub == embed_cmd) {
            const World w = load_world(ctx.path("world"));
            const Vocab vocab = load_vocab(ctx.path("vocab.json"));
            const fs::path dir = ckpt_or("checkpoints/pretrain");
            const Model model = load_model(dir);
            std::vector<NormalizedAddress> addrs;
            std::vector<std::int64_t> labels;
            for (const auto& p : w.pois.records()) {
                addrs.push_back(p.canonical());
                const auto path = admin_path(p.canonical(), w.tree);
                labels.push_back(path.size() >= 3 ? static_cast<std::int64_t>(path[2]) : -1);
            }
            const Tensor emb = embed_addresses(model, vocab, addrs);
            std::vector<std::uint8_t> bytes;
            for (double v : emb.data) io::append_le(bytes, v);
            io::write_binary(ctx.path("embeddings/embeddings.bin"), bytes);
            io::write_text(ctx.path("embeddings/embeddings.meta.json"),
                           json{{"shape", emb.shape}, {"dtype", "float64-le"}, {"labels", labels},
                                {"checkpoint_hash", checkpoint_hash(dir)}}.dump() + "\n");
            ctx.outputs["embeddings"] = ctx.path("embeddings").generic_string();
            ctx.extra = {{"rows", emb.rows()}, {"dim", emb.cols()}};
        } else if (sub == cluster_cmd) {
            const json meta = json::parse(io::read_text(ctx.path("embeddings/embeddings.meta.json")));
            Tensor emb(meta.at("shape").get<std::vector<std::size_t>>());
            const auto bytes = io::read_binary(ctx.path("embeddings/embeddings.bin"));
            if (bytes.size() != emb.size() * 8) throw FormatError("embeddings.bin does not match its shape");
            for (std::size_t i = 0; i < emb.size(); ++i) emb.data[i] = io::read_le_f64(bytes, i * 8);
            const auto labels = meta.at("labels").get<std::vector<std::int64_t>>();
            const json metrics = to_json(cluster_metrics(emb, labels));
            write_report(ctx.path("reports/cluster.json"), "cluster", metrics, chash,
                         meta.at("checkpoint_hash").get<std::string>(), dataset_hash(cfg.out_dir, {"world"}));
            ctx.outputs["report"] = ctx.path("reports/cluster.json").generic_string();
            ctx.extra = {{"metrics", metrics}};
        } else if (sub == verify_cmd) {
            json results = json::array();
            bool ok = true;
            for (const auto& r : checks::run_all(!skip_overfit)) {
                err << (r.pass ? "PASS " : "FAIL ") << r.id << " " << r.name << ": " << r.detail << "\n";
                results.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}});
                ok = ok && r.pass;
            }
            if (!ok) {
                err << "verify: at least one criterion failed\n";
                return 1;
            }
            ctx.extra = {{"criteria", results}};
        }

        json status{{"status", "ok"}, {"command", name}, {"config_hash", chash}, {"outputs", ctx.outputs}};
        for (const auto& [k, v] : ctx.extra.items()) status[k] = v;
        out << status.dump() << "\n";
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        switch (e.error_class()) {
            case ErrorClass::Usage: return 2;
            case ErrorClass::Data: return 3;
            case ErrorClass::Numerical: return 4;
        }
        return 3;
    } catch (const json::exception& e) {
        err << "FormatError: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        err << "IO error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << e.what() << "\n";
        return 3;
    }
}

}  // namespace geoaddr::cli
