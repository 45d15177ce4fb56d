// Command-line front end: synth, transform, train, infer, eval, gradcheck.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "olbp/olbp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> g_argv;

std::string join_argv() {
    std::string s;
    for (const auto& a : g_argv) s += (s.empty() ? "" : " ") + a;
    return s;
}

// every run records how to reproduce it next to its outputs
void write_provenance(const fs::path& dir, const std::string& command, std::uint64_t seed,
                      const json& extra = json::object()) {
    json j{{"command", command},
           {"argv", join_argv()},
           {"seed", seed},
           {"version", olbp::kVersion}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    fs::create_directories(dir);
    std::ofstream out(dir / "provenance.json");
    if (!out) throw olbp::DataError("cannot write provenance in " + dir.string());
    out << j.dump(2) << "\n";
}

std::string with_thousands(std::int64_t v) {
    std::string digits = std::to_string(v), out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count && count % 3 == 0) out.insert(out.begin(), ',');
        out.insert(out.begin(), *it);
        ++count;
    }
    return out;
}

std::string counts_line(std::int64_t part, std::int64_t total) {
    char pct[32];
    std::snprintf(pct, sizeof(pct), "%.1f", total ? 100.0 * double(part) / double(total) : 0.0);
    return with_thousands(part) + " (" + pct + "%)";
}

struct CommonPaths {
    std::string root = ".";
    fs::path resolve(const std::string& rel) const { return fs::path(root) / rel; }
};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const CommonPaths& paths, const std::string& out_rel, int images, int subjects,
              std::int64_t size, std::uint64_t seed, olbp::SynthSpec spec) {
    spec.width = spec.height = size;
    spec.subjects = subjects;
    const fs::path out = paths.resolve(out_rel);
    fs::create_directories(out / "images");
    fs::create_directories(out / "semantic");
    fs::create_directories(out / "fixations");

    olbp::DatasetManifest manifest;
    for (int i = 0; i < images; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img_%04d", i);
        const std::string image_id = buf;
        auto scene = olbp::gen_synthetic_scene(spec, olbp::mix_seed(seed, std::uint64_t(i)));
        olbp::write_png_rgb8((out / "images" / (image_id + ".png")).string(), scene.image);
        olbp::write_semantic_png((out / "semantic" / (image_id + ".png")).string(),
                                 scene.semantic);
        for (int s = 0; s < subjects; ++s) {
            char sb[8];
            std::snprintf(sb, sizeof(sb), "s%02d", s);
            const std::string sid = image_id + "_" + sb;
            olbp::save_fixation_map((out / "fixations" / (sid + ".txt")).string(),
                                    scene.fixations[std::size_t(s)]);
            olbp::SampleRecord r;
            r.id = sid;
            r.image_id = image_id;
            r.subject = s;
            r.image_path = "images/" + image_id + ".png";
            r.semantic_gt_path = "semantic/" + image_id + ".png";
            r.fixation_path = "fixations/" + sid + ".txt";
            r.constrained = scene.constrained[std::size_t(s)];
            r.fdm_sigma = spec.fdm_sigma;
            manifest.records.push_back(r);
        }
    }
    olbp::save_manifest((out / "manifest.jsonl").string(), manifest);
    write_provenance(out, "synth", seed,
                     {{"images", images}, {"subjects", subjects}, {"size", size}});
    const auto st = manifest.stats();
    std::cout << "wrote " << manifest.records.size() << " sample records under " << out.string()
              << "\n";
    std::cout << "constrained " << counts_line(st.constrained, st.constrained + st.unconstrained)
              << ", unconstrained "
              << counts_line(st.unconstrained, st.constrained + st.unconstrained) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

int cmd_transform(const CommonPaths& paths, const std::string& sem_rel,
                  const std::string& fix_rel, const std::string& img_rel,
                  const std::string& out_rel, int theta, double sigma, double noise,
                  std::uint64_t seed, std::int64_t train_images, std::uint64_t split_seed,
                  bool write_fdm) {
    const fs::path sem_dir = paths.resolve(sem_rel);
    const fs::path fix_dir = paths.resolve(fix_rel);
    const fs::path img_dir = paths.resolve(img_rel);
    const fs::path out = paths.resolve(out_rel);
    if (!fs::is_directory(sem_dir))
        throw olbp::DataError("semantic directory not found: " + sem_dir.string());
    if (!fs::is_directory(fix_dir))
        throw olbp::DataError("fixation directory not found: " + fix_dir.string());

    std::vector<std::string> image_ids;
    for (const auto& e : fs::directory_iterator(sem_dir))
        if (e.path().extension() == ".png") image_ids.push_back(e.path().stem().string());
    std::sort(image_ids.begin(), image_ids.end());
    if (image_ids.empty())
        throw olbp::DataError("no semantic annotations in " + sem_dir.string());

    struct Job {
        std::string image_id, sid, fix_file;
        int subject;
    };
    std::vector<Job> jobs;
    for (const auto& image_id : image_ids) {
        std::vector<fs::path> fix_files;
        for (const auto& e : fs::directory_iterator(fix_dir)) {
            const std::string stem = e.path().stem().string();
            if (e.path().extension() == ".txt" && stem.rfind(image_id + "_s", 0) == 0)
                fix_files.push_back(e.path());
        }
        std::sort(fix_files.begin(), fix_files.end());
        for (const auto& f : fix_files) {
            const std::string stem = f.stem().string();
            jobs.push_back({image_id, stem, f.string(),
                            std::atoi(stem.substr(image_id.size() + 2).c_str())});
        }
    }
    if (jobs.empty()) throw olbp::DataError("no fixation files match the annotations");

    fs::create_directories(out / "gt");
    if (noise > 0) fs::create_directories(out / "fixations_noisy");
    if (write_fdm) fs::create_directories(out / "fdm");

    std::vector<std::optional<olbp::SampleRecord>> slots(jobs.size());
    std::vector<std::string> rejected(jobs.size());
    olbp::parallel_for(jobs.size(), [&](std::size_t i) {
        const Job& job = jobs[i];
        auto sem = olbp::read_semantic_png((sem_dir / (job.image_id + ".png")).string());
        auto fm = olbp::load_fixation_map(job.fix_file, sem.labels.w, sem.labels.h);
        std::string fix_rel_path =
            fs::relative(fs::path(job.fix_file), out).generic_string();
        if (noise > 0) {
            fm = olbp::inject_noise(sem, fm, noise, olbp::mix_seed(seed, std::uint64_t(i)));
            const std::string noisy = "fixations_noisy/" + job.sid + ".txt";
            olbp::save_fixation_map((out / noisy).string(), fm);
            fix_rel_path = noisy;
        }
        try {
            auto gazed = olbp::distill_labels(olbp::collect_labels(sem, fm));
            auto gs = olbp::create_binary_gt(sem, gazed);
            auto gb = olbp::make_boundary_gt(gs.mask, theta);
            olbp::SampleRecord r;
            r.id = job.sid;
            r.image_id = job.image_id;
            r.subject = job.subject;
            r.image_path =
                fs::exists(img_dir / (job.image_id + ".png"))
                    ? fs::relative(img_dir / (job.image_id + ".png"), out).generic_string()
                    : "";
            r.semantic_gt_path =
                fs::relative(sem_dir / (job.image_id + ".png"), out).generic_string();
            r.fixation_path = fix_rel_path;
            r.binary_gt_path = "gt/" + job.sid + "_seg.png";
            r.boundary_gt_path = "gt/" + job.sid + "_bnd.png";
            r.constrained = olbp::classify_fm(sem, fm);
            r.fdm_sigma = sigma;
            olbp::write_mask_png((out / r.binary_gt_path).string(), gs.mask);
            olbp::write_mask_png((out / r.boundary_gt_path).string(), gb.mask);
            if (write_fdm) {
                auto fdm = olbp::make_fdm(fm, sigma);
                r.fdm_path = "fdm/" + job.sid + ".png";
                olbp::write_fdm_png((out / r.fdm_path).string(), fdm);
            }
            slots[i] = r;
        } catch (const olbp::DataError& e) {
            // all-background fixation maps have no gazed object; skip them
            if (std::string(e.what()).find("no gazed object") == std::string::npos) throw;
            rejected[i] = job.sid;
        }
    });

    olbp::DatasetManifest manifest;
    std::vector<std::string> skipped;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) manifest.records.push_back(*slots[i]);
        else skipped.push_back(rejected[i]);
    }
    if (manifest.records.empty()) throw olbp::DataError("every sample was rejected");
    if (train_images > 0) olbp::split_dataset(manifest, train_images, split_seed);
    olbp::save_manifest((out / "manifest.jsonl").string(), manifest);

    const auto st = manifest.stats();
    const std::int64_t total = st.constrained + st.unconstrained;
    json stats{{"samples", total},
               {"constrained", st.constrained},
               {"unconstrained", st.unconstrained},
               {"train", st.train},
               {"test", st.test},
               {"rejected", skipped}};
    {
        std::ofstream sf(out / "stats.json");
        sf << stats.dump(2) << "\n";
    }
    write_provenance(out, "transform", seed,
                     {{"theta", theta}, {"noise", noise}, {"train_images", train_images},
                      {"split_seed", split_seed}, {"sigma", sigma}});
    std::cout << "samples " << with_thousands(total) << ": constrained "
              << counts_line(st.constrained, total) << ", unconstrained "
              << counts_line(st.unconstrained, total) << "\n";
    if (train_images > 0)
        std::cout << "split: " << with_thousands(st.train) << " train / "
                  << with_thousands(st.test) << " test\n";
    for (const auto& s : skipped)
        std::cerr << "rejected (no gazed object): " << s << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonPaths& paths, const std::string& manifest_rel,
              const std::string& config_file, const std::string& preset,
              const std::string& ablation, const std::string& out_rel,
              const std::string& resume, const std::map<std::string, std::string>& overrides,
              std::optional<std::uint64_t> seed_flag) {
    olbp::OLBPConfig cfg =
        preset == "paper" ? olbp::OLBPConfig::paper() : olbp::OLBPConfig::toy();
    olbp::TrainConfig tcfg =
        preset == "paper" ? olbp::TrainConfig::paper() : olbp::TrainConfig::toy();
    if (!config_file.empty()) {
        std::ifstream in(paths.resolve(config_file));
        if (!in) throw olbp::DataError("cannot open config: " + config_file);
        std::ostringstream buf;
        buf << in.rdbuf();
        const auto kv = olbp::detail::parse_key_values(buf.str());
        cfg = olbp::OLBPConfig::from_key_values(kv);
        tcfg = olbp::TrainConfig::from_key_values(kv, tcfg);
    }
    // explicit flags win over the config file
    if (!overrides.empty()) tcfg = olbp::TrainConfig::from_key_values(overrides, tcfg);
    if (!ablation.empty()) cfg = olbp::apply_ablation(cfg, ablation);
    if (seed_flag) {
        cfg.rng_seed = *seed_flag;
        tcfg.rng_seed = *seed_flag;
    }
    cfg.validate();
    tcfg.validate();

    std::cout << cfg.to_text() << tcfg.to_text();

    const fs::path out = paths.resolve(out_rel);
    fs::create_directories(out);
    auto manifest = olbp::load_manifest(paths.resolve(manifest_rel).string());
    std::vector<olbp::SampleRecord> train_records;
    for (const auto& r : manifest.records)
        if (r.split == "train") train_records.push_back(r);
    if (train_records.empty())
        throw olbp::DataError("manifest has no train split; run transform with --train-images");
    for (const auto& r : train_records)
        if (r.image_path.empty())
            throw olbp::DataError("sample " + r.id + " has no image path in the manifest");

    const std::string manifest_root =
        fs::path(paths.resolve(manifest_rel)).parent_path().string();

    olbp::Network<float> net(cfg);
    olbp::SgdState<float> state;
    std::int64_t start_iter = 0;
    if (!resume.empty())
        start_iter =
            olbp::restore_checkpoint(olbp::load_checkpoint(paths.resolve(resume).string()),
                                     net, &state);

    std::cout << "parameters: " << net.parameter_count() << "\n";
    std::cout << "train samples: " << train_records.size() << "\n";

    // decoded samples are cached; desk-scale sets fit in memory
    std::map<std::string, olbp::TrainSample<float>> cache;
    std::mutex cache_mu;
    olbp::SampleLoader<float> loader = [&](const olbp::SampleRecord& rec) {
        std::lock_guard<std::mutex> lock(cache_mu);
        auto it = cache.find(rec.id);
        if (it == cache.end())
            it = cache.emplace(rec.id, olbp::load_sample<float>(rec, manifest_root, cfg)).first;
        return it->second;
    };

    std::ofstream log(out / "train_log.csv", start_iter == 0 ? std::ios::trunc : std::ios::app);
    auto checkpoint_cb = [&](std::int64_t iter, olbp::Network<float>& n,
                             olbp::SgdState<float>& s) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "ckpt_%06lld.ckpt", static_cast<long long>(iter));
        olbp::save_checkpoint((out / buf).string(), olbp::make_checkpoint(n, s, iter, tcfg));
        olbp::save_checkpoint((out / "ckpt_final.ckpt").string(),
                              olbp::make_checkpoint(n, s, iter, tcfg));
    };
    olbp::TrainHooks<float> hooks;
    hooks.on_step = [&](std::int64_t iter, double lr, const std::map<std::string, double>&,
                        double total) {
        if (iter % 50 == 0 || iter + 1 == tcfg.total_iters)
            std::cout << "iter " << iter << " lr " << lr << " loss " << total << std::endl;
    };
    write_provenance(out, "train", tcfg.rng_seed,
                     {{"config_hash", cfg.hash()}, {"ablation", ablation},
                      {"resume", resume}, {"start_iter", start_iter}});
    olbp::train_loop<float>(net, train_records, loader, tcfg, state, start_iter, &log,
                            checkpoint_cb, hooks);
    std::cout << "final checkpoint: " << (out / "ckpt_final.ckpt").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int cmd_infer(const CommonPaths& paths, const std::string& ckpt_rel, const std::string& image_rel,
              const std::string& fix_rel, const std::string& out_rel,
              const std::string& config_file) {
    auto ckpt = olbp::load_checkpoint(paths.resolve(ckpt_rel).string());
    olbp::OLBPConfig cfg;
    if (!config_file.empty()) {
        cfg = olbp::OLBPConfig::load(paths.resolve(config_file).string());
    } else if (ckpt.meta.contains("config_text")) {
        cfg = olbp::OLBPConfig::parse_text(ckpt.meta["config_text"].get<std::string>());
    } else {
        throw olbp::DataError("checkpoint has no embedded config; pass --config");
    }
    olbp::Network<float> net(cfg);
    olbp::SgdState<float>* no_state = nullptr;
    olbp::restore_checkpoint(ckpt, net, no_state);

    auto img = olbp::read_png_rgb8(paths.resolve(image_rel).string());
    auto image = olbp::image_to_tensor<float>(img, cfg.input_h, cfg.input_w);
    auto fm = olbp::load_fixation_map(paths.resolve(fix_rel).string(), img.w, img.h);
    auto fdm = olbp::resize_fdm(olbp::make_fdm(fm, cfg.fdm_sigma), cfg.input_h, cfg.input_w);

    auto out = net.infer(image, olbp::fdm_to_tensor<float>(fdm));
    auto prob_t = olbp::softmax_fg_prob<float>(nullptr, out.seg_final);
    olbp::Plane<double> prob(cfg.input_h, cfg.input_w);
    for (std::int64_t i = 0; i < prob.size(); ++i) prob.v[std::size_t(i)] = prob_t.data()[i];

    const fs::path out_path = paths.resolve(out_rel);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    olbp::write_prob_png(out_path.string(), prob);
    write_provenance(out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path(),
                     "infer", cfg.rng_seed, {{"config_hash", cfg.hash()}});
    std::cout << "wrote " << out_path.string() << " (" << cfg.input_w << "x" << cfg.input_h
              << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonPaths& paths, const std::string& manifest_rel,
             const std::string& pred_rel, const std::string& out_rel, const std::string& split,
             bool with_js) {
    auto manifest = olbp::load_manifest(paths.resolve(manifest_rel).string());
    const std::string manifest_root =
        fs::path(paths.resolve(manifest_rel)).parent_path().string();
    const fs::path pred_dir = paths.resolve(pred_rel);
    const fs::path out = paths.resolve(out_rel);
    fs::create_directories(out);

    std::vector<olbp::SampleRecord> records;
    for (const auto& r : manifest.records)
        if (split == "all" || r.split == split) records.push_back(r);
    if (records.empty()) throw olbp::DataError("no samples in split \"" + split + "\"");

    auto rep = olbp::evaluate_dataset(
        records,
        [&](const olbp::SampleRecord& r) -> std::optional<olbp::Plane<double>> {
            const fs::path p = pred_dir / (r.id + ".png");
            if (!fs::exists(p)) return std::nullopt;
            return olbp::read_prob_png(p.string());
        },
        [&](const olbp::SampleRecord& r) {
            return olbp::read_mask_png((fs::path(manifest_root) / r.binary_gt_path).string());
        });

    if (with_js) {
        std::map<std::string, std::vector<olbp::SampleRecord>> by_image;
        for (const auto& r : records) by_image[r.image_id].push_back(r);
        double acc = 0.0;
        std::int64_t n_img = 0;
        for (const auto& [image_id, recs] : by_image) {
            if (recs.size() < 2) continue;
            std::vector<olbp::Plane<double>> fdms;
            for (const auto& r : recs) {
                auto gt = olbp::read_mask_png(
                    (fs::path(manifest_root) / r.binary_gt_path).string());
                auto fm = olbp::load_fixation_map(
                    (fs::path(manifest_root) / r.fixation_path).string(), gt.w, gt.h);
                fdms.push_back(olbp::make_fdm(fm, r.fdm_sigma).grid);
            }
            const double js = olbp::mean_pairwise_js(fdms);
            rep.js_per_image[image_id] = js;
            acc += js;
            ++n_img;
        }
        if (n_img > 0) rep.mean_js = acc / double(n_img);
    }

    olbp::write_report_csv((out / "per_sample.csv").string(), rep);
    olbp::write_report_json((out / "summary.json").string(), rep);
    write_provenance(out, "eval", 0, {{"split", split}, {"pred_dir", pred_rel}});

    std::cout << "evaluated " << rep.samples.size() << " samples (J, S, wF, E, F): "
              << olbp::as_percent(rep.mean_j) << " " << olbp::as_percent(rep.mean_s) << " "
              << olbp::as_percent(rep.mean_wf) << " " << olbp::as_percent(rep.mean_e) << " "
              << olbp::as_percent(rep.mean_f) << "\n";
    if (rep.mean_js) std::cout << "mean pairwise JS: " << *rep.mean_js << "\n";
    if (!rep.missing.empty()) {
        for (const auto& id : rep.missing) std::cerr << "missing prediction: " << id << "\n";
        throw olbp::DataError(std::to_string(rep.missing.size()) + " predictions missing");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::string& ops, const std::string& network) {
    bool all_pass = true;
    if (!ops.empty()) {
        if (ops != "all") throw CLI::ValidationError("--ops", "only \"all\" is supported");
        auto results = olbp::op_gradcheck_suite(5);
        std::map<std::string, double> worst;
        for (const auto& r : results)
            worst[r.op] = std::max(worst[r.op], r.max_rel_error);
        for (const auto& [op, err] : worst) {
            const bool ok = err < 1e-4;
            all_pass = all_pass && ok;
            std::printf("%-18s max_rel_err %.3e  %s\n", op.c_str(), err, ok ? "PASS" : "FAIL");
        }
    }
    if (!network.empty()) {
        if (network != "toy" && network != "micro")
            throw CLI::ValidationError("--network", "expected \"toy\"");
        auto results = olbp::network_gradcheck(50);
        double worst = 0.0;
        for (const auto& r : results) worst = std::max(worst, r.rel_error);
        const bool ok = worst < 1e-3;
        all_pass = all_pass && ok;
        std::printf("network (16x16 micro) %zu sampled parameters, max_rel_err %.3e  %s\n",
                    results.size(), worst, ok ? "PASS" : "FAIL");
    }
    if (ops.empty() && network.empty())
        throw CLI::ValidationError("gradcheck", "pass --ops all and/or --network toy");
    if (!all_pass) throw olbp::NumericError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 0; i < argc; ++i) g_argv.emplace_back(argv[i]);

    CLI::App app{"fixation-driven object segmentation toolkit"};
    app.require_subcommand(1);
    CommonPaths paths;
    app.add_option("--root", paths.root, "base directory for all relative paths")
        ->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic desk-scale dataset");
    std::string synth_out = "data";
    int synth_images = 40, synth_subjects = 4;
    std::int64_t synth_size = 64;
    std::uint64_t synth_seed = 1;
    olbp::SynthSpec spec;
    synth->add_option("--out", synth_out, "output directory (relative to --root)");
    synth->add_option("--images", synth_images, "number of scenes");
    synth->add_option("--subjects", synth_subjects, "fixation maps per scene");
    synth->add_option("--size", synth_size, "canvas size in pixels");
    synth->add_option("--seed", synth_seed, "master seed");
    synth->add_option("--min-objects", spec.min_objects);
    synth->add_option("--max-objects", spec.max_objects);
    synth->add_option("--bg-fix-prob", spec.bg_fix_prob,
                      "chance a non-designated fixation lands on background");
    synth->add_option("--fixations-min", spec.min_fixations);
    synth->add_option("--fixations-max", spec.max_fixations);
    synth->add_option("--sigma", spec.fdm_sigma, "density-map standard deviation (px)");

    // transform
    auto* transform = app.add_subcommand(
        "transform", "derive binary/boundary ground truths from annotations + fixations");
    std::string t_sem = "data/semantic", t_fix = "data/fixations", t_img = "data/images",
                t_out = "data";
    int t_theta = 2;
    double t_sigma = 2.0, t_noise = 0.0;
    std::uint64_t t_seed = 1, t_split_seed = 1;
    std::int64_t t_train_images = 0;
    bool t_no_fdm = false;
    transform->add_option("--sem-dir", t_sem, "semantic annotation directory");
    transform->add_option("--fix-dir", t_fix, "fixation file directory");
    transform->add_option("--image-dir", t_img, "image directory");
    transform->add_option("--out", t_out, "output directory");
    transform->add_option("--theta", t_theta, "boundary dilation radius (px)");
    transform->add_option("--sigma", t_sigma, "density-map standard deviation (px)");
    transform->add_option("--noise", t_noise,
                          "fraction of extra background fixations (robustness protocol)");
    transform->add_option("--seed", t_seed, "noise sampling seed");
    transform->add_option("--train-images", t_train_images, "images assigned to train split");
    transform->add_option("--split-seed", t_split_seed, "split shuffling seed");
    transform->add_flag("--no-fdm", t_no_fdm, "skip density-map export");

    // train
    auto* train = app.add_subcommand("train", "optimize a network on a transformed dataset");
    std::string tr_manifest = "data/manifest.jsonl", tr_config, tr_preset = "toy",
                tr_ablation, tr_out = "run", tr_resume;
    std::optional<std::uint64_t> tr_seed;
    std::map<std::string, std::string> tr_overrides;
    double tr_lr = 0;
    std::int64_t tr_iters = 0, tr_iter_size = 0;
    train->add_option("--manifest", tr_manifest, "manifest path");
    train->add_option("--config", tr_config, "key=value config file");
    train->add_option("--preset", tr_preset, "paper | toy")
        ->check(CLI::IsMember({"paper", "toy"}));
    train->add_option("--ablation", tr_ablation,
                      "full|ba|ba_star|ba_olm|ba_bpm|ba_star_bpm|no_bpm|no_dilated|"
                      "no_multiply|no_concat|no_seg_sup");
    train->add_option("--out", tr_out, "run directory (checkpoints, log)");
    train->add_option("--resume", tr_resume, "checkpoint to resume from");
    auto* seed_opt = train->add_option("--seed", "seed override for init/training");
    auto* lr_opt = train->add_option("--lr", tr_lr, "learning-rate override");
    auto* iters_opt = train->add_option("--iters", tr_iters, "total iterations override");
    auto* isize_opt = train->add_option("--iter-size", tr_iter_size, "iteration size override");

    // infer
    auto* infer = app.add_subcommand("infer", "segment one image from its fixations");
    std::string in_ckpt, in_image, in_fix, in_out = "prediction.png", in_config;
    infer->add_option("--checkpoint", in_ckpt)->required();
    infer->add_option("--image", in_image)->required();
    infer->add_option("--fixations", in_fix)->required();
    infer->add_option("--out", in_out, "output probability PNG");
    infer->add_option("--config", in_config, "config override (else embedded in checkpoint)");

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against a manifest");
    std::string ev_manifest = "data/manifest.jsonl", ev_pred = "preds", ev_out = "report",
                ev_split = "test";
    bool ev_js = false;
    eval->add_option("--manifest", ev_manifest);
    eval->add_option("--pred-dir", ev_pred, "directory of <id>.png probability maps");
    eval->add_option("--out", ev_out, "report directory");
    eval->add_option("--split", ev_split, "train | test | all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    eval->add_flag("--js", ev_js, "also report mean pairwise JS per image");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_ops, gc_network;
    gradcheck->add_option("--ops", gc_ops, "\"all\": check every op");
    gradcheck->add_option("--network", gc_network, "\"toy\": sampled whole-network check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*synth)
            return cmd_synth(paths, synth_out, synth_images, synth_subjects, synth_size,
                             synth_seed, spec);
        if (*transform)
            return cmd_transform(paths, t_sem, t_fix, t_img, t_out, t_theta, t_sigma, t_noise,
                                 t_seed, t_train_images, t_split_seed, !t_no_fdm);
        if (*train) {
            if (seed_opt->count()) tr_seed = seed_opt->as<std::uint64_t>();
            if (lr_opt->count()) tr_overrides["train_lr"] = std::to_string(tr_lr);
            if (iters_opt->count()) tr_overrides["train_total_iters"] = std::to_string(tr_iters);
            if (isize_opt->count())
                tr_overrides["train_iter_size"] = std::to_string(tr_iter_size);
            return cmd_train(paths, tr_manifest, tr_config, tr_preset, tr_ablation, tr_out,
                             tr_resume, tr_overrides, tr_seed);
        }
        if (*infer) return cmd_infer(paths, in_ckpt, in_image, in_fix, in_out, in_config);
        if (*eval) return cmd_eval(paths, ev_manifest, ev_pred, ev_out, ev_split, ev_js);
        if (*gradcheck) return cmd_gradcheck(gc_ops, gc_network);
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const olbp::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const olbp::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
