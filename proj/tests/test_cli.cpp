#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olbp/dataset.hpp"
#include "olbp/trainer.hpp"

namespace fs = std::filesystem;
using namespace olbp;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(OLBP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
    std::sort(rel.begin(), rel.end());
    for (const auto& r : rel) {
        if (!fs::exists(b / r)) return false;
        if (slurp(a / r) != slurp(b / r)) return false;
    }
    return true;
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synth produces images x subjects records, byte-identical per seed", "[cli]") {
    TmpDir tmp("olbp_cli_synth");
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " synth --out a --images 5 --subjects 4 --size 64 --seed 7") == 0);
    auto manifest = load_manifest((tmp.path / "a/manifest.jsonl").string());
    REQUIRE(manifest.records.size() == 20);

    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " synth --out b --images 5 --subjects 4 --size 64 --seed 7") == 0);
    // provenance embeds the argv (differing --out), everything else matches
    fs::remove(tmp.path / "a/provenance.json");
    fs::remove(tmp.path / "b/provenance.json");
    REQUIRE(same_tree(tmp.path / "a", tmp.path / "b"));

    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " synth --out c --images 5 --subjects 4 --size 64 --seed 8") == 0);
    fs::remove(tmp.path / "c/provenance.json");
    REQUIRE_FALSE(same_tree(tmp.path / "a", tmp.path / "c"));
}

TEST_CASE("transform derives ground truths and splits", "[cli]") {
    TmpDir tmp("olbp_cli_transform");
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " synth --out data --images 6 --subjects 2 --size 64 --seed 3") == 0);
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " transform --sem-dir data/semantic --fix-dir data/fixations"
                    " --image-dir data/images --out data --sigma 2 --train-images 4") == 0);
    auto manifest = load_manifest((tmp.path / "data/manifest.jsonl").string());
    REQUIRE(manifest.records.size() == 12);
    auto st = manifest.stats();
    CHECK(st.train == 8);
    CHECK(st.test == 4);
    for (const auto& r : manifest.records) {
        CHECK(fs::exists(tmp.path / "data" / r.binary_gt_path));
        CHECK(fs::exists(tmp.path / "data" / r.boundary_gt_path));
        CHECK(fs::exists(tmp.path / "data" / r.fdm_path));
        // generator truth must match the transformation output
        auto sem = read_semantic_png((tmp.path / "data" / r.semantic_gt_path).string());
        auto fm = load_fixation_map((tmp.path / "data" / r.fixation_path).string(),
                                    sem.labels.w, sem.labels.h);
        auto gt = create_binary_gt(sem, distill_labels(collect_labels(sem, fm)));
        auto on_disk = read_mask_png((tmp.path / "data" / r.binary_gt_path).string());
        REQUIRE(gt.mask.v == on_disk.v);
    }
    auto stats = nlohmann::json::parse(slurp(tmp.path / "data/stats.json"));
    CHECK(stats["samples"].get<int>() == 12);
    CHECK(stats["constrained"].get<int>() + stats["unconstrained"].get<int>() == 12);
}

TEST_CASE("transform with noise keeps ground truths and flips constrained", "[cli]") {
    TmpDir tmp("olbp_cli_noise");
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " synth --out data --images 4 --subjects 2 --size 64 --seed 11"
                    " --bg-fix-prob 0") == 0);
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " transform --sem-dir data/semantic --fix-dir data/fixations"
                    " --image-dir data/images --out clean --sigma 2") == 0);
    REQUIRE(run_cli("--root " + tmp.path.string() +
                    " transform --sem-dir data/semantic --fix-dir data/fixations"
                    " --image-dir data/images --out noisy --sigma 2 --noise 0.15 --seed 5") == 0);
    auto clean = load_manifest((tmp.path / "clean/manifest.jsonl").string());
    auto noisy = load_manifest((tmp.path / "noisy/manifest.jsonl").string());
    REQUIRE(clean.records.size() == noisy.records.size());
    CHECK(clean.stats().unconstrained == 0);  // bg-fix-prob 0: all constrained
    CHECK(noisy.stats().constrained == 0);    // appended background points flip every map
    for (std::size_t i = 0; i < clean.records.size(); ++i) {
        // binary GT unchanged by background-only noise
        auto a = read_mask_png((tmp.path / "clean" / clean.records[i].binary_gt_path).string());
        auto b = read_mask_png((tmp.path / "noisy" / noisy.records[i].binary_gt_path).string());
        REQUIRE(a.v == b.v);
        // noisy fixation files have ceil(0.15 n) extra points
        auto fa = parse_fixation_points(
            (tmp.path / "clean" / clean.records[i].fixation_path).string());
        auto fb = parse_fixation_points(
            (tmp.path / "noisy" / noisy.records[i].fixation_path).string());
        REQUIRE(fb.size() == fa.size() + std::size_t(std::ceil(0.15 * double(fa.size()))));
    }
}

TEST_CASE("train, infer, eval round trip with exit codes", "[cli]") {
    TmpDir tmp("olbp_cli_train");
    const std::string root = "--root " + tmp.path.string() + " ";
    REQUIRE(run_cli(root + "synth --out data --images 4 --subjects 2 --size 64 --seed 2") == 0);
    REQUIRE(run_cli(root + "transform --sem-dir data/semantic --fix-dir data/fixations"
                           " --image-dir data/images --out data --sigma 2 --train-images 3") ==
            0);
    REQUIRE(run_cli(root + "train --manifest data/manifest.jsonl --out run --preset toy"
                           " --iters 8 --seed 4") == 0);
    REQUIRE(fs::exists(tmp.path / "run/ckpt_final.ckpt"));
    REQUIRE(fs::exists(tmp.path / "run/train_log.csv"));
    REQUIRE(fs::exists(tmp.path / "run/provenance.json"));

    // infer every test sample, then eval
    auto manifest = load_manifest((tmp.path / "data/manifest.jsonl").string());
    int test_count = 0;
    for (const auto& r : manifest.records) {
        if (r.split != "test") continue;
        ++test_count;
        REQUIRE(run_cli(root + "infer --checkpoint run/ckpt_final.ckpt --image data/" +
                        r.image_path + " --fixations data/" + r.fixation_path +
                        " --out preds/" + r.id + ".png") == 0);
        REQUIRE(fs::exists(tmp.path / "preds" / (r.id + ".png")));
    }
    REQUIRE(test_count > 0);
    REQUIRE(run_cli(root + "eval --manifest data/manifest.jsonl --pred-dir preds --out report"
                           " --split test --js") == 0);
    REQUIRE(fs::exists(tmp.path / "report/per_sample.csv"));
    auto summary = nlohmann::json::parse(slurp(tmp.path / "report/summary.json"));
    CHECK(summary["count"].get<int>() == test_count);
    CHECK(summary["missing"].empty());

    // deterministic inference: repeated run is byte-identical
    const auto& r0 = [&]() -> const SampleRecord& {
        for (const auto& r : manifest.records)
            if (r.split == "test") return r;
        throw std::runtime_error("no test sample");
    }();
    REQUIRE(run_cli(root + "infer --checkpoint run/ckpt_final.ckpt --image data/" +
                    r0.image_path + " --fixations data/" + r0.fixation_path +
                    " --out again.png") == 0);
    REQUIRE(slurp(tmp.path / "preds" / (r0.id + ".png")) == slurp(tmp.path / "again.png"));

    // missing prediction: nonzero exit naming the sample
    fs::remove(tmp.path / "preds" / (r0.id + ".png"));
    REQUIRE(run_cli(root + "eval --manifest data/manifest.jsonl --pred-dir preds"
                           " --out report2 --split test") == 2);
}

TEST_CASE("usage errors exit 1", "[cli]") {
    CHECK(run_cli("definitely-not-a-subcommand") == 1);
    CHECK(run_cli("gradcheck") == 1);           // no scope given
    CHECK(run_cli("gradcheck --ops sometimes") == 1);
    CHECK(run_cli("train --preset bogus") == 1);
}

TEST_CASE("train resume continues from a checkpoint", "[cli]") {
    TmpDir tmp("olbp_cli_resume");
    const std::string root = "--root " + tmp.path.string() + " ";
    REQUIRE(run_cli(root + "synth --out data --images 3 --subjects 1 --size 64 --seed 6") == 0);
    REQUIRE(run_cli(root + "transform --sem-dir data/semantic --fix-dir data/fixations"
                           " --image-dir data/images --out data --sigma 2 --train-images 2") ==
            0);
    TrainConfig dummy;  // values irrelevant; ensures header compiles
    (void)dummy;
    REQUIRE(run_cli(root + "train --manifest data/manifest.jsonl --out full --preset toy"
                           " --iters 10 --seed 9") == 0);
    REQUIRE(run_cli(root + "train --manifest data/manifest.jsonl --out half --preset toy"
                           " --iters 5 --seed 9") == 0);
    REQUIRE(run_cli(root + "train --manifest data/manifest.jsonl --out half --preset toy"
                           " --iters 10 --seed 9 --resume half/ckpt_final.ckpt") == 0);
    REQUIRE(slurp(tmp.path / "full/ckpt_final.ckpt") ==
            slurp(tmp.path / "half/ckpt_final.ckpt"));
}
