// vith: deep-hashing retrieval pipeline driver.
//
// Subcommands: train, encode, eval, pr-curve, make-synth, inspect-weights.
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric abort.
// Every flag can also come from a JSON config file (--config); explicit
// flags win over the file, the file wins over defaults.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vithash/checkpoint.hpp"
#include "vithash/data.hpp"
#include "vithash/model.hpp"
#include "vithash/objectives.hpp"
#include "vithash/retrieval.hpp"
#include "vithash/serialize.hpp"
#include "vithash/trainer.hpp"

using namespace vith;
using nlohmann::json;

namespace {

struct Options {
    // model
    std::string model = "tiny";
    std::size_t bits = 16;
    std::string mode = "all";
    // objective
    std::string objective = "greedyhash";
    LossConfig loss;
    // data
    std::string data;        // VTSS dataset file
    std::string cifar;       // CIFAR-10 binary directory
    std::string protocol = "synth";
    std::string protocol_file;
    std::vector<float> norm_mean{0.5f, 0.5f, 0.5f};
    std::vector<float> norm_std{0.5f, 0.5f, 0.5f};
    // training
    double lr = 1e-5;
    std::size_t epochs = 150;
    std::size_t batch = 32;
    std::size_t eval_every = 30;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t seed = 0;
    bool resume = false;
    // encode
    std::string checkpoint;
    std::string split = "database";
    // eval / pr-curve
    std::string query_path, db_path, pr_out;
    std::size_t cutoff = 0;
    bool exclude_self = false;
    std::string ap_norm = "hits";
    // make-synth
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    double sigma = 0.1;
    bool multi_label = false;
    // shared
    std::string out;
    std::string in;
    std::string config_path;
};

FeatureMode parse_mode(const std::string& s) {
    if (s == "all") return FeatureMode::All;
    if (s == "cls") return FeatureMode::ClsOnly;
    throw ConfigError("unknown feature mode '" + s + "' (want all or cls)");
}

ProtocolSpec resolve_protocol(const Options& o) {
    if (!o.protocol_file.empty()) {
        std::ifstream in(o.protocol_file);
        if (!in) throw DataError("cannot open protocol file '" + o.protocol_file + "'");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ProtocolSpec::from_json(text);
    }
    return ProtocolSpec::builtin(o.protocol);
}

Dataset resolve_dataset(const Options& o) {
    if (!o.data.empty() && !o.cifar.empty())
        throw ConfigError("give either --data or --cifar, not both");
    if (!o.data.empty()) return load_dataset(o.data);
    if (!o.cifar.empty()) return load_cifar10(o.cifar);
    throw ConfigError("no dataset: give --data FILE or --cifar DIR");
}

ModelConfig resolve_model(const Options& o) {
    auto mc = ModelConfig::preset(o.model, o.bits, parse_mode(o.mode));
    mc.norm.mean = o.norm_mean;
    mc.norm.std = o.norm_std;
    return mc;
}

LossConfig resolve_loss(const Options& o) {
    LossConfig lc = o.loss;
    lc.objective = parse_objective(o.objective);
    lc.validate();
    return lc;
}

std::string config_echo(const Options& o, const std::string& command) {
    json j;
    j["command"] = command;
    j["model"] = o.model;
    j["bits"] = o.bits;
    j["mode"] = o.mode;
    j["objective"] = o.objective;
    j["dsh-margin-scale"] = o.loss.dsh_margin_scale;
    j["dsh-alpha"] = o.loss.dsh_alpha;
    j["hashnet-step"] = o.loss.hashnet_step_size;
    j["greedy-alpha"] = o.loss.greedy_alpha;
    j["idhn-lambda"] = o.loss.idhn_lambda;
    j["csq-lambda"] = o.loss.csq_lambda;
    j["dpn-margin"] = o.loss.dpn_margin;
    j["data"] = o.data;
    j["cifar"] = o.cifar;
    j["protocol"] = o.protocol;
    j["protocol-file"] = o.protocol_file;
    j["norm-mean"] = o.norm_mean;
    j["norm-std"] = o.norm_std;
    j["lr"] = o.lr;
    j["epochs"] = o.epochs;
    j["batch"] = o.batch;
    j["eval-every"] = o.eval_every;
    j["beta1"] = o.beta1;
    j["beta2"] = o.beta2;
    j["eps"] = o.eps;
    j["seed"] = o.seed;
    return j.dump();
}

// restore CLI-relevant fields from a checkpoint's config echo so encode can
// rebuild the model and splits without retyping the training flags
void overlay_from_echo(Options& o, const std::string& echo, const std::set<std::string>& given) {
    json j;
    try {
        j = json::parse(echo);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint config echo is not JSON: ") + e.what());
    }
    auto want = [&](const char* key) { return j.contains(key) && !given.count(key); };
    if (want("model")) o.model = j["model"].get<std::string>();
    if (want("bits")) o.bits = j["bits"].get<std::size_t>();
    if (want("mode")) o.mode = j["mode"].get<std::string>();
    if (want("data")) o.data = j["data"].get<std::string>();
    if (want("cifar")) o.cifar = j["cifar"].get<std::string>();
    if (want("protocol")) o.protocol = j["protocol"].get<std::string>();
    if (want("protocol-file")) o.protocol_file = j["protocol-file"].get<std::string>();
    if (want("norm-mean")) o.norm_mean = j["norm-mean"].get<std::vector<float>>();
    if (want("norm-std")) o.norm_std = j["norm-std"].get<std::vector<float>>();
    if (want("seed")) o.seed = j["seed"].get<std::uint64_t>();
    if (want("batch")) o.batch = j["batch"].get<std::size_t>();
}

int cmd_train(Options& o) {
    auto mc = resolve_model(o);
    auto lc = resolve_loss(o);
    if (o.out.empty()) throw ConfigError("train: --out PREFIX is required");
    TrainConfig tc;
    tc.adam = AdamConfig{o.lr, o.beta1, o.beta2, o.eps};
    tc.epochs = o.epochs;
    tc.batch_size = o.batch;
    tc.eval_every = o.eval_every;
    tc.seed = o.seed;
    tc.loss = lc;
    tc.validate();

    auto pool = resolve_dataset(o);
    auto ds = apply_protocol(std::move(pool), resolve_protocol(o), o.seed);

    const std::string metrics_path = o.out + ".metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("train: cannot write '" + metrics_path + "'");

    auto model = Model::fresh(mc, o.seed);
    auto obj = ObjectiveState<float>::make(lc, ds.classes, mc.head.bits, o.seed);
    ResumePoint rp;
    bool resuming = false;
    if (o.resume) {
        auto ck = load_checkpoint(o.out + ".last");
        auto named = model.named();
        auto aux = obj.named();
        named.insert(named.end(), aux.begin(), aux.end());
        restore(ck.weights, named);
        rp = ResumePoint::from_checkpoint(ck);
        resuming = true;
        std::fprintf(stderr, "resuming from epoch %zu\n", rp.epoch);
    }
    const std::string echo = config_echo(o, "train");
    auto result = train(model, obj, ds, tc, echo, o.out, resuming ? &rp : nullptr);
    metrics << result.metrics_csv;
    metrics.close();
    if (!metrics) throw DataError("train: write failed for '" + metrics_path + "'");
    std::printf("best mAP@%zu = %.9g at epoch %zu\n", std::size_t(ds.map_cutoff),
                result.best_map, result.best_epoch);
    std::printf("checkpoint: %s.vtsw  metrics: %s\n", o.out.c_str(), metrics_path.c_str());
    return 0;
}

int cmd_encode(Options& o, const std::set<std::string>& given) {
    if (o.checkpoint.empty()) throw ConfigError("encode: --checkpoint PREFIX is required");
    if (o.out.empty()) throw ConfigError("encode: --out FILE is required");
    // a bad checkpoint is a configuration problem for encode, not a data one
    Model model;
    try {
        auto ck = load_checkpoint(o.checkpoint);
        if (!ck.meta.config_json.empty()) overlay_from_echo(o, ck.meta.config_json, given);
        model = Model::fresh(resolve_model(o), o.seed);
        restore(ck.weights, model.named(), /*ignore_unknown=*/true);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }

    auto pool = resolve_dataset(o);
    std::vector<std::uint32_t> indices;
    Dataset ds;
    if (o.split == "all") {
        ds = std::move(pool);
        indices.resize(ds.items.size());
        for (std::uint32_t i = 0; i < indices.size(); ++i) indices[i] = i;
    } else {
        ds = apply_protocol(std::move(pool), resolve_protocol(o), o.seed);
        if (o.split == "train") indices = ds.train;
        else if (o.split == "query") indices = ds.query;
        else if (o.split == "database") indices = ds.database;
        else throw ConfigError("encode: unknown split '" + o.split + "'");
    }
    auto codes = encode_split(model, ds, indices, o.batch);
    save_code_set(o.out, codes);
    std::printf("wrote %zu codes of %zu bits to %s\n", codes.size(), codes.bits, o.out.c_str());
    return 0;
}

int cmd_eval(Options& o, bool curve_only) {
    if (o.query_path.empty() || o.db_path.empty())
        throw ConfigError("eval: --query and --db are required");
    auto queries = load_code_set(o.query_path);
    auto db = load_code_set(o.db_path);
    if (queries.bits != db.bits)
        throw ConfigError("eval: query codes have " + std::to_string(queries.bits) +
                          " bits, database has " + std::to_string(db.bits));
    if (curve_only && o.out.empty()) throw ConfigError("pr-curve: --out FILE is required");
    if (!curve_only) {
        EvalOptions opt;
        opt.cutoff = o.cutoff == 0 ? db.size() : o.cutoff;
        opt.exclude_self = o.exclude_self;
        if (o.ap_norm == "hits") opt.norm = ApNorm::HitsInCutoff;
        else if (o.ap_norm == "min") opt.norm = ApNorm::MinCutoffRelevant;
        else throw ConfigError("eval: unknown --norm '" + o.ap_norm + "' (want hits or min)");
        auto res = map_at_k(queries, db, opt);
        std::printf("mAP@%zu = %.9g\n", opt.cutoff, res.map);
    }
    const std::string pr_path = curve_only ? o.out : o.pr_out;
    if (!pr_path.empty()) {
        auto pr = pr_curve(queries, db, o.exclude_self);
        std::ofstream out(pr_path, std::ios::trunc);
        if (!out) throw DataError("cannot write '" + pr_path + "'");
        out << "# queries_used=" << pr.queries_used << " queries_skipped=" << pr.queries_skipped
            << "\n"
            << pr_curve_csv(pr);
        if (!out) throw DataError("write failed for '" + pr_path + "'");
        std::printf("PR curve (%zu points) written to %s\n", pr.recall.size(), pr_path.c_str());
    }
    return 0;
}

int cmd_make_synth(Options& o) {
    if (o.out.empty()) throw ConfigError("make-synth: --out FILE is required");
    SynthConfig sc;
    sc.classes = o.classes;
    sc.per_class = o.per_class;
    sc.image_size = o.image_size;
    sc.channels = o.channels;
    sc.noise_sigma = o.sigma;
    sc.multi_label = o.multi_label;
    auto ds = synth_dataset(sc, o.seed);
    save_dataset(o.out, ds);
    std::printf("wrote %zu items (%zu classes, %zux%zux%zu) to %s\n", ds.items.size(), ds.classes,
                ds.image_size, ds.image_size, ds.channels, o.out.c_str());
    return 0;
}

int cmd_inspect(Options& o) {
    if (o.in.empty()) throw ConfigError("inspect-weights: --in FILE is required");
    auto weights = load_weights(o.in);
    std::size_t total = 0;
    for (const auto& [name, t] : weights) {
        double l2 = 0;
        for (float v : t.data) l2 += double(v) * double(v);
        std::printf("%-24s %-14s n=%-9zu l2=%.6g\n", name.c_str(), shape_str(t.shape).c_str(),
                    t.data.size(), std::sqrt(l2));
        total += t.data.size();
    }
    std::printf("%zu tensors, %zu parameters\n", weights.size(), total);
    return 0;
}

// --config FILE: merge JSON keys as if they were flags placed right after
// the subcommand (so explicit flags still win)
std::vector<std::string> merge_config_args(int argc, char** argv,
                                            const std::set<std::string>& known_flags,
                                            const std::set<std::string>& known_bools) {
    std::vector<std::string> args(argv, argv + argc);
    if (args.size() < 2) return args;
    std::string path;
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file '" + path + "': expected a JSON object");
    std::vector<std::string> injected;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "config") continue;
        if (!known_flags.count(key))
            throw ConfigError("config file '" + path + "': unknown key '" + key + "'");
        const json& v = it.value();
        if (known_bools.count(key)) {
            if (!v.is_boolean())
                throw ConfigError("config file '" + path + "': key '" + key + "' must be boolean");
            if (v.get<bool>()) injected.push_back("--" + key);
        } else if (v.is_array()) {
            std::string joined;
            for (const auto& e : v) joined += (joined.empty() ? "" : ",") + e.dump();
            injected.push_back("--" + key + "=" + joined);
        } else if (v.is_string()) {
            injected.push_back("--" + key + "=" + v.get<std::string>());
        } else {
            injected.push_back("--" + key + "=" + v.dump());
        }
    }
    std::vector<std::string> merged;
    merged.push_back(args[0]);
    merged.push_back(args[1]);
    merged.insert(merged.end(), injected.begin(), injected.end());
    merged.insert(merged.end(), args.begin() + 2, args.end());
    return merged;
}

int run(int argc, char** argv) {
    Options o;
    CLI::App app{"deep-hashing image retrieval: train, encode, and evaluate binary codes"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::set<std::string> bool_flags;
    auto add_common_model = [&](CLI::App* sub) {
        sub->add_option("--model", o.model, "encoder preset: tiny, vts32, vts16")
            ->capture_default_str();
        sub->add_option("--bits", o.bits, "hash code width K")->capture_default_str();
        sub->add_option("--mode", o.mode, "head features: all tokens or cls only (all|cls)")
            ->capture_default_str();
        sub->add_option("--norm-mean", o.norm_mean, "per-channel pixel mean")
            ->delimiter(',')
            ->capture_default_str();
        sub->add_option("--norm-std", o.norm_std, "per-channel pixel std")
            ->delimiter(',')
            ->capture_default_str();
    };
    auto add_common_data = [&](CLI::App* sub) {
        sub->add_option("--data", o.data, "dataset container file (VTSS)");
        sub->add_option("--cifar", o.cifar, "CIFAR-10 binary batch directory");
        sub->add_option("--protocol", o.protocol,
                        "split protocol: cifar10@54000, cifar10@all, imagenet, nuswide, coco, "
                        "synth")
            ->capture_default_str();
        sub->add_option("--protocol-file", o.protocol_file, "protocol spec JSON file");
    };
    auto add_config_opt = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON config file (flags win over it)");
    };

    auto* t = app.add_subcommand("train", "train a hashing model and keep the best checkpoint");
    add_common_model(t);
    add_common_data(t);
    t->add_option("--objective", o.objective,
                  "training objective: dsh, hashnet, greedyhash, idhn, csq, dpn")
        ->capture_default_str();
    t->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    t->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
    t->add_option("--batch", o.batch, "mini-batch size")->capture_default_str();
    t->add_option("--eval-every", o.eval_every, "epochs between retrieval evaluations")
        ->capture_default_str();
    t->add_option("--beta1", o.beta1, "Adam beta1")->capture_default_str();
    t->add_option("--beta2", o.beta2, "Adam beta2")->capture_default_str();
    t->add_option("--eps", o.eps, "Adam epsilon")->capture_default_str();
    t->add_option("--seed", o.seed, "run seed (init, shuffling, dropout, splits)")
        ->capture_default_str();
    t->add_option("--dsh-margin-scale", o.loss.dsh_margin_scale,
                  "DSH margin as a multiple of K")
        ->capture_default_str();
    t->add_option("--dsh-alpha", o.loss.dsh_alpha, "DSH quantization weight")
        ->capture_default_str();
    t->add_option("--hashnet-step", o.loss.hashnet_step_size,
                  "HashNet beta schedule step size")
        ->capture_default_str();
    t->add_option("--greedy-alpha", o.loss.greedy_alpha, "GreedyHash cubic penalty weight")
        ->capture_default_str();
    t->add_option("--idhn-lambda", o.loss.idhn_lambda, "IDHN quantization weight")
        ->capture_default_str();
    t->add_option("--csq-lambda", o.loss.csq_lambda, "CSQ quantization weight")
        ->capture_default_str();
    t->add_option("--dpn-margin", o.loss.dpn_margin, "DPN hinge margin")->capture_default_str();
    t->add_option("--out", o.out, "output prefix for checkpoint and metrics");
    t->add_flag("--resume", o.resume, "continue from <out>.last checkpoint");
    bool_flags.insert("resume");
    add_config_opt(t);

    auto* e = app.add_subcommand("encode", "encode a dataset split into a code-set file");
    e->add_option("--checkpoint", o.checkpoint, "checkpoint prefix (expects .vtsw and .json)");
    e->add_option("--split", o.split, "which split to encode: train, query, database, all")
        ->capture_default_str();
    e->add_option("--out", o.out, "output code-set file (VTSC)");
    e->add_option("--batch", o.batch, "encoding batch size")->capture_default_str();
    e->add_option("--seed", o.seed, "split seed override");
    add_common_model(e);
    add_common_data(e);
    add_config_opt(e);

    auto* v = app.add_subcommand("eval", "mAP@K and optional PR curve from two code sets");
    v->add_option("--query", o.query_path, "query code-set file");
    v->add_option("--db", o.db_path, "database code-set file");
    v->add_option("--cutoff", o.cutoff, "retrieval cutoff K (0 = database size)")
        ->capture_default_str();
    v->add_flag("--exclude-self", o.exclude_self, "drop database items sharing the query id");
    bool_flags.insert("exclude-self");
    v->add_option("--norm", o.ap_norm,
                  "AP normalization: hits (relevant in cutoff) or min (min(cutoff, relevant))")
        ->capture_default_str();
    v->add_option("--pr", o.pr_out, "also write the PR curve CSV here");
    add_config_opt(v);

    auto* p = app.add_subcommand("pr-curve", "precision-recall curve CSV from two code sets");
    p->add_option("--query", o.query_path, "query code-set file");
    p->add_option("--db", o.db_path, "database code-set file");
    p->add_option("--out", o.out, "output CSV file");
    p->add_flag("--exclude-self", o.exclude_self, "drop database items sharing the query id");
    add_config_opt(p);

    auto* s = app.add_subcommand("make-synth", "generate a synthetic dataset container");
    s->add_option("--classes", o.classes, "number of classes")->capture_default_str();
    s->add_option("--per-class", o.per_class, "items per class")->capture_default_str();
    s->add_option("--size", o.image_size, "image side length")->capture_default_str();
    s->add_option("--channels", o.channels, "image channels")->capture_default_str();
    s->add_option("--sigma", o.sigma, "pixel noise standard deviation")->capture_default_str();
    s->add_flag("--multi-label", o.multi_label, "give items 1-3 overlapping labels");
    bool_flags.insert("multi-label");
    s->add_option("--seed", o.seed, "generator seed")->capture_default_str();
    s->add_option("--out", o.out, "output dataset file (VTSS)");
    add_config_opt(s);

    auto* w = app.add_subcommand("inspect-weights", "list tensors in a weight container");
    w->add_option("--in", o.in, "weight container file (VTSW)");

    // collect the subcommand's long flag names for config-file validation
    std::set<std::string> known;
    if (argc >= 2) {
        if (auto* sub = app.get_subcommand_no_throw(argv[1])) {
            for (const auto* opt : sub->get_options())
                for (const auto& n : opt->get_lnames()) known.insert(n);
        }
    }
    auto args = merge_config_args(argc, argv, known, bool_flags);
    // which flags the user gave explicitly (checkpoint echo must not override them)
    std::set<std::string> given;
    for (int i = 2; i < argc; ++i) {
        std::string a = argv[i];
        if (a.rfind("--", 0) != 0) continue;
        a = a.substr(2);
        if (auto eq = a.find('='); eq != std::string::npos) a = a.substr(0, eq);
        given.insert(a);
    }

    std::vector<char*> cargs;
    cargs.reserve(args.size());
    for (auto& s2 : args) cargs.push_back(s2.data());
    try {
        app.parse(int(cargs.size()), cargs.data());
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::fprintf(stderr, "config error: %s\n", ex.what());
        return 2;
    }

    if (t->parsed()) return cmd_train(o);
    if (e->parsed()) return cmd_encode(o, given);
    if (v->parsed()) return cmd_eval(o, false);
    if (p->parsed()) return cmd_eval(o, true);
    if (s->parsed()) return cmd_make_synth(o);
    if (w->parsed()) return cmd_inspect(o);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
