#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "flex/dataset.hpp"
#include "flex/model.hpp"
#include "flex/training.hpp"
#include "flex/worldsim.hpp"

using namespace flex;
using namespace flex::train;

namespace {

world::WorldConfig tiny_world() {
    world::WorldConfig wc;
    wc.cameras = 2;
    wc.timesteps = 3;
    wc.horizon = 4;
    wc.height = 16;
    wc.width = 32;
    wc.stride = 2;
    return wc;
}

// A dataset whose train split holds exactly `train_clips` clips.
std::string make_dataset(const std::string& name, int train_clips,
                         const world::WorldConfig& wc = tiny_world()) {
    static std::map<std::string, std::string> cache;
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    std::vector<world::Clip> clips;
    for (uint64_t seed = 1; static_cast<int>(clips.size()) < train_clips; ++seed)
        if (world::split_of(seed) == world::Split::train)
            clips.push_back(world::generate_clip(seed, wc));
    const std::string path = ::testing::TempDir() + "train_" + name + ".flexdata";
    data::write_dataset(path, wc, 1, clips);
    cache[name] = path;
    return path;
}

RunConfig tiny_run(const std::string& dataset) {
    RunConfig rc;
    rc.repr = "flex";
    rc.cameras = 2;
    rc.timesteps = 3;
    rc.horizon = 4;
    rc.height = 16;
    rc.width = 32;
    rc.patch_size = 8;
    rc.d_enc = 16;
    rc.scene_tokens = 6;
    rc.enc_layers = 1;
    rc.enc_heads = 2;
    rc.d_llm = 32;
    rc.policy_blocks = 1;
    rc.policy_heads = 2;
    rc.history_window = 2;
    rc.stage1_steps = 4;
    rc.stage2_steps = 2;
    rc.warmup = 2;
    rc.batch = 2;
    rc.stage1_peak_lr = 3e-3;
    rc.stage2_lr = 1e-4;
    rc.seed = 11;
    rc.dataset = dataset;
    return rc;
}

// --- loss -------------------------------------------------------------------

TEST(Loss, UniformLogitsGiveLnV) {
    policy::LayoutConfig lc;
    lc.timesteps = 2;
    lc.horizon = 3;
    lc.chunk = 2;
    policy::SequenceLayout layout = policy::build_layout(lc);
    const int vocab = 10;
    NoGradGuard guard;
    Tensor logits = Tensor::zeros({layout.total_len, vocab});
    std::vector<std::vector<int>> ids{{1, 2, 3}, {4, 5, 6}};
    Tensor loss = interleaved_loss(logits, layout, ids);
    EXPECT_NEAR(loss.item(), std::log(10.0), 1e-6);
}

TEST(Loss, MisalignmentThrows) {
    policy::LayoutConfig lc;
    lc.timesteps = 2;
    lc.horizon = 3;
    lc.chunk = 2;
    policy::SequenceLayout layout = policy::build_layout(lc);
    NoGradGuard guard;
    Tensor logits = Tensor::zeros({layout.total_len, 10});
    EXPECT_THROW(interleaved_loss(logits, layout, {{1, 2, 3}}), ShapeError);
    EXPECT_THROW(interleaved_loss(logits, layout, {{1, 2, 3}, {4, 5}}), ShapeError);
}

TEST(Loss, InterleavedT1EqualsNonInterleaved) {
    // With a single timestep the two modes build the same sequence, so the
    // losses coincide bit-for-bit.
    policy::LayoutConfig lc;
    lc.timesteps = 1;
    lc.horizon = 3;
    lc.chunk = 4;
    lc.mode = policy::Mode::interleaved;
    policy::SequenceLayout inter = policy::build_layout(lc);
    lc.mode = policy::Mode::non_interleaved;
    policy::SequenceLayout flat = policy::build_layout(lc);
    ASSERT_EQ(inter.total_len, flat.total_len);
    ASSERT_EQ(inter.logical_pos, flat.logical_pos);

    Rng rng(42);
    NoGradGuard guard;
    Tensor logits = Tensor::zeros({inter.total_len, 12});
    for (auto& v : logits.data()) v = rng.next_float() - 0.5f;
    std::vector<std::vector<int>> ids{{7, 3, 9}};
    EXPECT_EQ(interleaved_loss(logits, inter, ids).item(),
              interleaved_loss(logits, flat, ids).item());
}

TEST(Loss, InterleavedEqualsMeanOfPrefixSplitLosses) {
    const std::string ds = make_dataset("main", 10);
    Trainer tr(tiny_run(ds), ::testing::TempDir() + "prefixloss");
    world::Clip clip = tr.reader().read(1);
    NoGradGuard guard;
    auto a = tr.model().assemble(clip);
    const double full =
        interleaved_loss(tr.model().forward_logits(a.x), tr.model().layout(), a.future_ids).item();
    double mean = 0.0;
    for (int k = 0; k < 3; ++k) mean += prefix_split_loss(tr.model(), a, k) / 3.0;
    EXPECT_NEAR(full, mean, 1e-5);
}

// --- determinism and freezing ------------------------------------------------

TEST(Trainer, IdenticalSeedsGiveBitIdenticalFirstStep) {
    const std::string ds = make_dataset("main", 10);
    Trainer a(tiny_run(ds), ::testing::TempDir() + "da");
    Trainer b(tiny_run(ds), ::testing::TempDir() + "db");
    StepRecord ra = a.step_once();
    StepRecord rb = b.step_once();
    EXPECT_EQ(ra.loss, rb.loss);
    EXPECT_EQ(a.params().find("policy.head.w")->value.data(),
              b.params().find("policy.head.w")->value.data());
}

TEST(Trainer, StageOneFreezesPatchifierStageTwoReleasesIt) {
    const std::string ds = make_dataset("main", 10);
    RunConfig rc = tiny_run(ds);
    rc.stage1_steps = 2;
    rc.stage2_steps = 1;
    Trainer tr(rc, ::testing::TempDir() + "freeze");
    const auto patch_init = tr.params().find("patchify.embed.w")->value.data();
    const auto policy_init = tr.params().find("policy.head.w")->value.data();
    tr.step_once();
    tr.step_once();
    EXPECT_EQ(tr.params().find("patchify.embed.w")->value.data(), patch_init);
    EXPECT_NE(tr.params().find("policy.head.w")->value.data(), policy_init);
    tr.step_once();  // stage 2
    EXPECT_NE(tr.params().find("patchify.embed.w")->value.data(), patch_init);
}

TEST(Trainer, NonFiniteLossAborts) {
    const std::string ds = make_dataset("main", 10);
    Trainer tr(tiny_run(ds), ::testing::TempDir() + "nan");
    auto& w = tr.params().find("policy.head.w")->value.data();
    std::fill(w.begin(), w.end(), std::numeric_limits<float>::quiet_NaN());
    try {
        tr.step_once();
        FAIL() << "expected an abort on non-finite loss";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
    }
}

TEST(Trainer, ResumeReproducesBitExactly) {
    const std::string ds = make_dataset("main", 10);
    RunConfig rc = tiny_run(ds);
    Trainer a(rc, ::testing::TempDir() + "resume_a");
    a.step_once();
    a.step_once();
    a.step_once();
    const std::string snap = ::testing::TempDir() + "resume_snap";
    a.save_state(snap);
    std::vector<double> tail;
    for (int i = 0; i < 3; ++i) tail.push_back(a.step_once().loss);

    Trainer b(rc, ::testing::TempDir() + "resume_b");
    b.load_state(snap);
    EXPECT_EQ(b.global_step(), 3);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(b.step_once().loss, tail[i]) << "resumed step " << i;
    EXPECT_EQ(a.params().find("policy.head.w")->value.data(),
              b.params().find("policy.head.w")->value.data());
}

// --- artifacts ----------------------------------------------------------------

TEST(Trainer, RunWritesManifestMetricsAndCheckpoints) {
    const std::string ds = make_dataset("main", 10);
    RunConfig rc = tiny_run(ds);
    rc.stage1_steps = 3;
    rc.stage2_steps = 1;
    const std::string out = ::testing::TempDir() + "artifacts";
    Trainer tr(rc, out);
    tr.run(nullptr);

    for (const char* f : {"/manifest.json", "/metrics.jsonl", "/stage1.ckpt", "/stage1.opt",
                          "/stage2.ckpt", "/stage2.opt"})
        EXPECT_TRUE(std::filesystem::exists(out + f)) << f;

    std::ifstream mf(out + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    RunConfig round = RunConfig::from_json(manifest["config"]);
    EXPECT_EQ(round.scene_tokens, rc.scene_tokens);
    EXPECT_EQ(round.seed, rc.seed);
    EXPECT_EQ(manifest["dataset_header_sha1"].get<std::string>().size(), 40u);

    std::ifstream mx(out + "/metrics.jsonl");
    std::string line;
    int lines = 0;
    double last_loss = -1;
    while (std::getline(mx, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        ++lines;
        EXPECT_EQ(j["step"].get<int>(), lines);
        EXPECT_TRUE(j.contains("loss") && j.contains("lr") && j.contains("clips_per_s"));
        last_loss = j["loss"].get<double>();
    }
    EXPECT_EQ(lines, 4);
    EXPECT_TRUE(std::isfinite(last_loss));
}

TEST(Trainer, MismatchedDatasetGeometryRejected) {
    const std::string ds = make_dataset("main", 10);
    RunConfig rc = tiny_run(ds);
    rc.cameras = 1;
    EXPECT_THROW(Trainer(rc, ::testing::TempDir() + "mismatch"), ConfigError);
}

TEST(RunConfig, JsonRoundTripAndValidation) {
    RunConfig rc = tiny_run("some.flexdata");
    rc.repr = "baseline";
    rc.interleave = false;
    rc.variant = "per_image_cross";
    RunConfig back = RunConfig::from_json(rc.to_json());
    EXPECT_EQ(back.to_json(), rc.to_json());

    RunConfig bad = tiny_run("x");
    bad.stage2_lr = bad.stage1_peak_lr;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = tiny_run("x");
    bad.batch = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = tiny_run("");
    EXPECT_THROW(bad.validate(), ConfigError);
}

// --- overfit smoke ------------------------------------------------------------

TEST(Overfit, EightClipsFiveHundredSteps) {
    world::WorldConfig wc = tiny_world();
    const std::string ds = make_dataset("overfit8", 8, wc);
    RunConfig rc = tiny_run(ds);
    rc.stage1_steps = 400;
    rc.stage2_steps = 100;
    rc.warmup = 20;
    rc.batch = 4;
    rc.stage1_peak_lr = 2e-3;
    rc.stage2_lr = 2e-4;
    Trainer tr(rc, ::testing::TempDir() + "overfit");
    ASSERT_EQ(tr.train_indices().size(), 8u);

    std::vector<double> losses;
    for (int s = 0; s < 500; ++s) losses.push_back(tr.step_once().loss);

    // Monotone trend across 50-step windows, and a decisive overall drop.
    std::vector<double> windows;
    for (size_t w = 0; w + 50 <= losses.size(); w += 50) {
        double m = 0;
        for (size_t i = w; i < w + 50; ++i) m += losses[i] / 50.0;
        windows.push_back(m);
    }
    for (size_t i = 1; i < windows.size(); ++i)
        EXPECT_LT(windows[i], windows[i - 1] * 1.10) << "window " << i;
    EXPECT_LT(losses.back(), 0.3 * losses.front());
}

}  // namespace
