// Command-line front end: gen-data | train | eval | bench | ablate | analyze.
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime/I-O error.
//
// Every command writes a manifest (the effective config) before doing work,
// so any run is reproducible from its --out-dir alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flex/analysis.hpp"
#include "flex/checkpoint.hpp"
#include "flex/core.hpp"
#include "flex/dataset.hpp"
#include "flex/evaluation.hpp"
#include "flex/model.hpp"
#include "flex/training.hpp"
#include "flex/worldsim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flex;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        fail_config("'", path, "' is not valid JSON: ", e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    fs::path p(path);
    try {
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
    } catch (const fs::filesystem_error& e) {
        throw IoError("cannot create directory for '" + path + "': " + e.what());
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << text;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& effective) {
    json m{{"command", command}, {"config", effective}};
    write_text(out_dir + "/manifest.json", m.dump(2) + "\n");
}

// Deterministic clip ids for a dataset: stream i of the generation seed.
std::vector<world::Clip> generate_clips(const world::WorldConfig& wc, std::uint64_t seed,
                                        int count) {
    std::vector<world::Clip> clips;
    clips.reserve(count);
    for (int i = 0; i < count; ++i)
        clips.push_back(world::generate_clip(derive_seed(seed, i), wc));
    return clips;
}

// Params must outlive the model; keep them together.
struct Workbench {
    ParamSet params;
    std::optional<model::Model> model;

    void build(const train::RunConfig& rc, const std::string& ckpt) {
        Rng rng(derive_seed(rc.seed, train::kParamStream));
        model.emplace(params, rc.model_config(), rng);
        if (!ckpt.empty()) load_checkpoint(ckpt, params);
    }
};

train::RunConfig load_run_config(const std::string& path, const std::string& dataset_override,
                                 std::int64_t seed_override) {
    train::RunConfig rc = train::RunConfig::from_json(read_json_file(path));
    if (!dataset_override.empty()) rc.dataset = dataset_override;
    if (seed_override >= 0) rc.seed = static_cast<std::uint64_t>(seed_override);
    return rc;
}

std::vector<std::size_t> split_or_fail(data::DatasetReader& reader, const std::string& split) {
    const world::Split want = split == "train" ? world::Split::train : world::Split::test;
    if (split != "train" && split != "test") fail_config("unknown split '", split, "'");
    auto idx = reader.split_indices(want);
    if (idx.empty()) fail_config("dataset has no clips in the ", split, " split");
    return idx;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenArgs {
    int clips = 0;
    std::uint64_t seed = 7;
    std::string out;
    world::WorldConfig wc;
};

int cmd_gen_data(const GenArgs& a) {
    if (a.clips <= 0) fail_config("--clips must be positive (got ", a.clips, ")");
    a.wc.validate();
    const auto clips = generate_clips(a.wc, a.seed, a.clips);
    std::size_t train = 0;
    for (const auto& c : clips)
        if (world::split_of(c.clip_id) == world::Split::train) ++train;

    write_text(a.out + ".manifest.json",
               json{{"command", "gen-data"},
                    {"config", data::config_json(a.wc, a.seed, a.clips)},
                    {"out", a.out}}
                       .dump(2) +
                   "\n");
    data::write_dataset(a.out, a.wc, a.seed, clips);
    std::cout << "wrote " << clips.size() << " clips (train " << train << ", test "
              << clips.size() - train << ") to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, out_dir = "out", dataset;
    std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
    train::RunConfig rc = load_run_config(a.config, a.dataset, a.seed);
    train::Trainer trainer(rc, a.out_dir);
    trainer.run(nullptr, &std::cout);
    std::cout << "trained " << trainer.total_steps() << " steps; checkpoints in " << a.out_dir
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string config, ckpt, dataset, out_dir = "out", split = "test";
    std::int64_t seed = -1;
    int clips = 0;  // 0 = full split
    int k = 6;
    float temperature = 1.0f;
    bool cv = false;
};

int cmd_eval(const EvalArgs& a) {
    const train::RunConfig rc = load_run_config(a.config, a.dataset, a.seed);
    write_manifest(a.out_dir, "eval",
                   json{{"run", rc.to_json()},
                        {"ckpt", a.ckpt},
                        {"split", a.split},
                        {"clips", a.clips},
                        {"k", a.k},
                        {"temperature", a.temperature}});
    Workbench wb;
    wb.build(rc, a.ckpt);
    data::DatasetReader reader(rc.dataset);
    const auto idx = split_or_fail(reader, a.split);

    eval::EvalOptions opt;
    opt.k = a.k;
    opt.temperature = a.temperature;
    opt.seed = rc.seed;
    opt.max_clips = a.clips;
    eval::EvalReport rep = eval::evaluate(*wb.model, reader, idx, opt);
    rep.config_hash = git_blob_sha1(rc.to_json().dump());

    json out{{"model", rep.to_json()}};
    if (a.cv)
        out["constant_velocity"] =
            eval::evaluate_constant_velocity(reader, idx, rc.horizon, a.clips).to_json();
    write_text(a.out_dir + "/report.json", out.dump(2) + "\n");
    std::cout << "minADE6 " << rep.minade6 << " over " << rep.clips << " clips";
    if (a.cv) std::cout << " (constant-velocity " << out["constant_velocity"]["minade6"] << ")";
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config, ckpt, dataset, out_dir = "out";
    int clips = 8, warmup = 3, timed = 10, reps = 5;
};

int cmd_bench(const BenchArgs& a) {
    const train::RunConfig rc = load_run_config(a.config, a.dataset, -1);
    write_manifest(a.out_dir, "bench",
                   json{{"run", rc.to_json()},
                        {"ckpt", a.ckpt},
                        {"clips", a.clips},
                        {"warmup", a.warmup},
                        {"timed", a.timed},
                        {"reps", a.reps}});
    Workbench wb;
    wb.build(rc, a.ckpt);
    data::DatasetReader reader(rc.dataset);
    const auto idx = split_or_fail(reader, "test");

    std::vector<world::Clip> clips;  // preloaded: timing excludes data loading
    for (int i = 0; i < a.clips; ++i) clips.push_back(reader.read(idx[i % idx.size()]));
    const eval::BenchResult r =
        eval::throughput_bench(*wb.model, clips, a.warmup, a.timed, a.reps, rc.seed);

    json out{{"bench",
              json{{"mean_clips_per_s", r.mean_clips_per_s},
                   {"std_clips_per_s", r.std_clips_per_s},
                   {"repetitions", r.reps}}}};
    write_text(a.out_dir + "/report.json", out.dump(2) + "\n");
    std::cout << "clips/s: " << r.mean_clips_per_s << " +/- " << r.std_clips_per_s << " over "
              << a.reps << " reps\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string attn;  // post-process one existing dump
    std::string config, ckpt, dataset, out_dir = "out/analysis";
    int clips = 8, maps = 3;
    bool probe = false;
    int probe_seeds = 50;
};

void export_analysis(const std::string& out_dir,
                     const std::vector<std::vector<analysis::TokenResponse>>& per_clip,
                     const enc::SceneAttention& first, int maps) {
    const auto agg = analysis::aggregate_responses(per_clip);
    write_text(out_dir + "/responses.csv", analysis::responses_csv(agg));
    write_text(out_dir + "/curve.csv",
               analysis::curve_csv(analysis::sorted_response_curve(per_clip)));
    // Heat grids of the top-ranked tokens, from the first clip's record: the
    // argmax image per token (where the response peaks).
    for (const auto& a : agg) {
        if (a.rank >= maps) continue;
        const auto& r0 = per_clip.front()[a.token_index];
        const auto grids = analysis::response_map(a.token_index, first);
        for (const auto& g : grids) {
            if (g.camera != r0.camera || g.timestep != r0.timestep) continue;
            std::ostringstream os;
            analysis::write_pgm(os, g);
            std::ostringstream name;
            name << out_dir << "/attn/token" << a.token_index << "_rank" << a.rank << "_c"
                 << g.camera << "_t" << g.timestep << ".pgm";
            write_text(name.str(), os.str());
        }
    }
}

int cmd_analyze(const AnalyzeArgs& a) {
    if (!a.attn.empty()) {
        if (!fs::exists(a.attn)) {
            std::cerr << "missing attention dump: " << a.attn << "\n";
            return 3;
        }
        write_manifest(a.out_dir, "analyze", json{{"attn", a.attn}, {"maps", a.maps}});
        const enc::SceneAttention attn = enc::load_attention(a.attn);
        export_analysis(a.out_dir, {analysis::token_responses(attn)}, attn, a.maps);
        std::cout << "analyzed " << a.attn << " -> " << a.out_dir << "\n";
        return 0;
    }

    if (a.config.empty()) fail_config("analyze needs --attn or --config");
    const train::RunConfig rc = load_run_config(a.config, a.dataset, -1);
    write_manifest(a.out_dir, "analyze",
                   json{{"run", rc.to_json()},
                        {"ckpt", a.ckpt},
                        {"clips", a.clips},
                        {"maps", a.maps},
                        {"probe", a.probe}});
    Workbench wb;
    wb.build(rc, a.ckpt);
    data::DatasetReader reader(rc.dataset);
    auto idx = split_or_fail(reader, "test");
    if (a.clips > 0 && static_cast<std::size_t>(a.clips) < idx.size()) idx.resize(a.clips);

    fs::create_directories(a.out_dir + "/attn");
    std::vector<std::vector<analysis::TokenResponse>> per_clip;
    std::optional<enc::SceneAttention> first;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const world::Clip clip = reader.read(idx[i]);
        const auto grids = wb.model->patchify_clip(clip);
        const enc::SceneAttention attn = wb.model->encoder().attention_record(grids);
        enc::save_attention(a.out_dir + "/attn/clip" + std::to_string(idx[i]) + ".flexattn",
                            attn);
        per_clip.push_back(analysis::token_responses(attn));
        if (!first) first = attn;
    }
    export_analysis(a.out_dir, per_clip, *first, a.maps);

    json report{{"clips", per_clip.size()}, {"scene_tokens", first->scene_tokens}};
    if (a.probe) {
        const world::WorldConfig wc = data::config_from_json(reader.config());
        std::vector<std::uint64_t> seeds(a.probe_seeds);
        std::iota(seeds.begin(), seeds.end(), std::uint64_t{100000});
        const analysis::ProbeResult pr = analysis::localization_probe(
            wb.model->patchifier(), wb.model->encoder(), wc, seeds);
        report["probe"] = json{{"hits", pr.hits}, {"clips", pr.clips}, {"rate", pr.rate()}};
        std::cout << "destination probe: " << pr.hits << "/" << pr.clips << " localized\n";
    }
    write_text(a.out_dir + "/report.json", report.dump(2) + "\n");
    std::cout << "analyzed " << per_clip.size() << " clips -> " << a.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
    std::string axis, grid, config, out_dir = "out/ablate";
    int eval_clips = 32, eval_k = 6;
    int bench_clips = 4, bench_warmup = 2, bench_timed = 6, bench_reps = 3;
};

std::vector<int> parse_grid(const std::string& grid) {
    std::vector<int> out;
    std::stringstream ss(grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            fail_config("--grid entry '", item, "' is not an integer");
        }
    }
    if (out.empty()) fail_config("--grid is empty");
    return out;
}

struct SweepPoint {
    std::string name;
    train::RunConfig rc;
};

std::vector<SweepPoint> build_points(const AblateArgs& a, const train::RunConfig& base) {
    std::vector<SweepPoint> points;
    auto add = [&](const std::string& name, train::RunConfig rc) {
        points.push_back({name, std::move(rc)});
    };
    if (a.axis == "tokens") {
        for (int k : parse_grid(a.grid.empty() ? "18,45,90,180" : a.grid)) {
            train::RunConfig rc = base;
            rc.scene_tokens = k;
            add("tokens" + std::to_string(k), rc);
        }
    } else if (a.axis == "layers") {
        for (int l : parse_grid(a.grid.empty() ? "2,4,8" : a.grid)) {
            train::RunConfig rc = base;
            rc.enc_layers = l;
            add("layers" + std::to_string(l), rc);
        }
    } else if (a.axis == "attention") {
        for (const char* v :
             {"joint_self", "joint_cross", "per_image_self", "per_image_cross"}) {
            train::RunConfig rc = base;
            rc.variant = v;
            add(v, rc);
        }
    } else if (a.axis == "interleave") {
        for (const char* repr : {"flex", "baseline"})
            for (bool inter : {true, false}) {
                train::RunConfig rc = base;
                rc.repr = repr;
                rc.interleave = inter;
                add(std::string(repr) + (inter ? "_interleave" : "_noninterleave"), rc);
            }
    } else if (a.axis == "cameras") {
        for (int c : parse_grid(a.grid.empty() ? "2,4,7" : a.grid)) {
            train::RunConfig rc = base;
            rc.cameras = c;
            add("cameras" + std::to_string(c), rc);
        }
    } else if (a.axis == "patchifier") {
        for (int p : parse_grid(a.grid.empty() ? "4,8,16" : a.grid)) {
            train::RunConfig rc = base;
            rc.patch_size = p;
            add("patch" + std::to_string(p), rc);
        }
    } else {
        fail_config("unknown ablation axis '", a.axis,
                    "' (tokens|layers|attention|interleave|cameras|patchifier)");
    }
    return points;
}

// Rows on the efficiency/accuracy Pareto front (maximize clips/s, minimize
// minade6).
std::string pareto_csv(const std::vector<std::pair<double, double>>& pts,
                       const std::vector<std::string>& names) {
    std::ostringstream os;
    os << "name,minade6,clips_per_s,on_front\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i && pts[j].first <= pts[i].first && pts[j].second >= pts[i].second &&
                (pts[j].first < pts[i].first || pts[j].second > pts[i].second))
                dominated = true;
        os << names[i] << ',' << pts[i].first << ',' << pts[i].second << ','
           << (dominated ? 0 : 1) << "\n";
    }
    return os.str();
}

int cmd_ablate(const AblateArgs& a) {
    const train::RunConfig base =
        train::RunConfig::from_json(read_json_file(a.config));
    write_manifest(a.out_dir, "ablate",
                   json{{"axis", a.axis}, {"grid", a.grid}, {"base", base.to_json()}});
    const auto points = build_points(a, base);

    std::vector<std::string> rows;
    std::vector<std::pair<double, double>> front_pts;
    std::vector<std::string> front_names;
    for (const auto& point : points) {
        std::cout << "=== " << point.name << " ===" << std::endl;
        try {
            train::RunConfig rc = point.rc;
            if (a.axis == "cameras") {
                // Same world seed and clip count, re-rendered with this rig.
                data::DatasetReader base_reader(base.dataset);
                world::WorldConfig wc = data::config_from_json(base_reader.config());
                wc.cameras = rc.cameras;
                const std::uint64_t seed = base_reader.config().at("seed").get<std::uint64_t>();
                const int n = base_reader.config().at("clips").get<int>();
                const std::string path =
                    a.out_dir + "/data_c" + std::to_string(rc.cameras) + ".flexdata";
                data::write_dataset(path, wc, seed, generate_clips(wc, seed, n));
                rc.dataset = path;
            }
            train::Trainer trainer(rc, a.out_dir + "/points/" + point.name);
            trainer.run(nullptr, &std::cout);

            const auto idx = split_or_fail(trainer.reader(), "test");
            eval::EvalOptions opt;
            opt.k = a.eval_k;
            opt.seed = rc.seed;
            opt.max_clips = a.eval_clips;
            eval::EvalReport rep = eval::evaluate(trainer.model(), trainer.reader(), idx, opt);
            rep.config_hash = git_blob_sha1(rc.to_json().dump());

            std::vector<world::Clip> bench_clips;
            for (int i = 0; i < a.bench_clips; ++i)
                bench_clips.push_back(trainer.reader().read(idx[i % idx.size()]));
            rep.clips_per_s = eval::throughput_bench(trainer.model(), bench_clips,
                                                     a.bench_warmup, a.bench_timed,
                                                     a.bench_reps, rc.seed)
                                  .mean_clips_per_s;

            rows.push_back(eval::sweep_csv_row(rc, rep) + ",ok");
            front_pts.emplace_back(rep.minade6, rep.clips_per_s);
            front_names.push_back(point.name);
            std::cout << point.name << ": minADE6 " << rep.minade6 << ", clips/s "
                      << rep.clips_per_s << "\n";
        } catch (const std::exception& e) {
            std::string msg = e.what();
            for (char& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            rows.push_back(eval::sweep_csv_row(point.rc, eval::EvalReport{}) + ",error: " + msg);
            std::cout << point.name << ": failed (" << e.what() << ")\n";
        }
    }

    std::ostringstream sweep;
    sweep << eval::sweep_csv_header() << ",status\n";
    for (const auto& r : rows) sweep << r << "\n";
    write_text(a.out_dir + "/sweep.csv", sweep.str());
    write_text(a.out_dir + "/pareto.csv", pareto_csv(front_pts, front_names));
    std::cout << "sweep complete: " << rows.size() << " points -> " << a.out_dir
              << "/sweep.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flex: scene-token compression pipeline for trajectory prediction"};
    app.require_subcommand(1);
    std::function<int()> action;

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic driving dataset");
    g->add_option("--clips", gen.clips, "Number of clips")->required();
    g->add_option("--seed", gen.seed, "Generation seed");
    g->add_option("--out", gen.out, "Output dataset path")->required();
    g->add_option("--cameras", gen.wc.cameras, "Cameras per timestep (1-7)");
    g->add_option("--timesteps", gen.wc.timesteps, "Observed frames T");
    g->add_option("--horizon", gen.wc.horizon, "Future waypoints H");
    g->add_option("--height", gen.wc.height, "Image height");
    g->add_option("--width", gen.wc.width, "Image width");
    g->add_option("--stride", gen.wc.stride, "Frame stride over the base clock");
    g->add_flag("--probe", gen.wc.probe_style,
                "Probe style: no markings/agents, marker is the one bright object");
    g->callback([&] { action = [&] { return cmd_gen_data(gen); }; });

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Two-stage training run");
    t->add_option("--config", tr.config, "Run config JSON")->required();
    t->add_option("--out-dir", tr.out_dir, "Artifact directory");
    t->add_option("--dataset", tr.dataset, "Override the config's dataset path");
    t->add_option("--seed", tr.seed, "Override the config's seed");
    t->callback([&] { action = [&] { return cmd_train(tr); }; });

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "minADE6 evaluation over a split");
    e->add_option("--config", ev.config, "Run config JSON")->required();
    e->add_option("--ckpt", ev.ckpt, "Checkpoint (.ckpt); untrained weights if omitted");
    e->add_option("--dataset", ev.dataset, "Override the config's dataset path");
    e->add_option("--out-dir", ev.out_dir, "Artifact directory");
    e->add_option("--split", ev.split, "train|test");
    e->add_option("--clips", ev.clips, "Cap on evaluated clips (0 = all)");
    e->add_option("--k", ev.k, "Sampled trajectories per clip");
    e->add_option("--temperature", ev.temperature, "Sampling temperature");
    e->add_option("--seed", ev.seed, "Override the config's seed");
    e->add_flag("--cv", ev.cv, "Also report the constant-velocity baseline");
    e->callback([&] { action = [&] { return cmd_eval(ev); }; });

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Inference throughput (clips/s)");
    b->add_option("--config", be.config, "Run config JSON")->required();
    b->add_option("--ckpt", be.ckpt, "Checkpoint (.ckpt)");
    b->add_option("--dataset", be.dataset, "Override the config's dataset path");
    b->add_option("--out-dir", be.out_dir, "Artifact directory");
    b->add_option("--clips", be.clips, "Preloaded clips to cycle through");
    b->add_option("--warmup", be.warmup, "Warmup inferences");
    b->add_option("--timed", be.timed, "Timed inferences per repetition");
    b->add_option("--reps", be.reps, "Repetitions");
    b->callback([&] { action = [&] { return cmd_bench(be); }; });

    AnalyzeArgs an;
    auto* n = app.add_subcommand("analyze", "Scene-token attention analysis");
    n->add_option("--attn", an.attn, "Post-process one existing attention dump");
    n->add_option("--config", an.config, "Run config JSON (to encode dataset clips)");
    n->add_option("--ckpt", an.ckpt, "Checkpoint (.ckpt)");
    n->add_option("--dataset", an.dataset, "Override the config's dataset path");
    n->add_option("--out-dir", an.out_dir, "Artifact directory");
    n->add_option("--clips", an.clips, "Clips to encode and aggregate");
    n->add_option("--maps", an.maps, "Top-ranked tokens to export as PGM heat grids");
    n->add_flag("--probe", an.probe, "Run the destination-marker localization probe");
    n->add_option("--probe-seeds", an.probe_seeds, "Seeds for the localization probe");
    n->callback([&] { action = [&] { return cmd_analyze(an); }; });

    AblateArgs ab;
    auto* l = app.add_subcommand("ablate", "Serial train+eval sweep along one axis");
    l->add_option("--axis", ab.axis, "tokens|layers|attention|interleave|cameras|patchifier")
        ->required();
    l->add_option("--grid", ab.grid, "Comma-separated grid values (axis-dependent default)");
    l->add_option("--config", ab.config, "Base run config JSON")->required();
    l->add_option("--out-dir", ab.out_dir, "Artifact directory");
    l->add_option("--eval-clips", ab.eval_clips, "Eval clips per point");
    l->add_option("--eval-k", ab.eval_k, "Sampled trajectories per clip");
    l->add_option("--bench-clips", ab.bench_clips, "Preloaded bench clips per point");
    l->add_option("--bench-warmup", ab.bench_warmup, "Bench warmup inferences");
    l->add_option("--bench-timed", ab.bench_timed, "Bench timed inferences per repetition");
    l->add_option("--bench-reps", ab.bench_reps, "Bench repetitions");
    l->callback([&] { action = [&] { return cmd_ablate(ab); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 2;
    }

    try {
        return action();
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const ShapeError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "i/o error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "runtime error: " << err.what() << "\n";
        return 3;
    }
}
