#include "cli.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "ddt/checkpoint.hpp"
#include "ddt/metrics.hpp"
#include "ddt/samplers.hpp"
#include "ddt/sharesched.hpp"
#include "ddt/spectral.hpp"

namespace fs = std::filesystem;

namespace ddt::cli {

std::string git_blob_sha1(const std::string& bytes) {
    const std::string head = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, head.data(), head.size()) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

void RunManifest::add_input(const fs::path& path, const std::string& bytes) {
    inputs.emplace_back(path.string(), git_blob_sha1(bytes));
}

std::string RunManifest::to_text() const {
    std::ostringstream os;
    os << "command=" << command << '\n';
    os << "config=" << config_path << '\n';
    os << "seed=" << seed << '\n';
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        os << "input." << i << '=' << inputs[i].first << ' ' << inputs[i].second << '\n';
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) os << "output." << i << '=' << outputs[i] << '\n';
    for (const auto& [k, v] : settings) os << "setting." << k << '=' << v << '\n';
    return os.str();
}

namespace {

std::string num(double v) { return format_double(v); }

Checkpoint load_checkpoint(const std::string& path, RunManifest& manifest) {
    const std::string bytes = read_file(path);
    manifest.add_input(path, bytes);
    return deserialize_checkpoint(bytes);
}

// Training settings stored under train.* in trainer checkpoints; defaults
// (with the given seed) for bare model checkpoints.
TrainConfig train_config_of(const Checkpoint& ck, std::uint64_t fallback_seed) {
    KeyValues kv;
    for (const auto& [k, v] : ck.header) {
        if (k.rfind("train.", 0) == 0) kv[k.substr(6)] = v;
    }
    if (kv.empty()) {
        TrainConfig c;
        c.seed = fallback_seed;
        return c;
    }
    return TrainConfig::from_key_values(kv);
}

std::vector<int> cycle_labels(std::size_t n, std::size_t classes) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
    return y;
}

Tensor gaussian(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& e : v) e = rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
}

Shape image_shape(const ModelConfig& c, std::size_t n) { return {n, c.channels, c.image_size, c.image_size}; }

SolverKind solver_arg(const std::string& name) {
    try {
        return parse_solver(name);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--solver: ") + e.what());
    }
}

GuidanceSpec guidance_arg(double w, const std::vector<double>& interval) {
    if (interval.size() != 2) throw UsageError("--cfg-interval takes two values");
    GuidanceSpec g{w, interval[0], interval[1]};
    try {
        g.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("guidance: ") + e.what());
    }
    return g;
}

SimilarityMatrix probe(const DDTModel& model, std::uint64_t seed, std::size_t samples, const TimeGrid& grid,
                       SolverKind solver) {
    if (samples == 0) throw UsageError("--probe-samples must be positive");
    Rng rng = Rng::stream(seed, "probe", 0);
    Tensor x0 = gaussian(rng, image_shape(model.config(), samples));
    return probe_similarity(model, x0, cycle_labels(samples, model.config().num_classes), grid, solver);
}

SimilarityMatrix load_similarity(const std::string& path, RunManifest& manifest) {
    const std::string text = read_file(path);
    manifest.add_input(path, text);
    SimilarityMatrix s = parse_similarity(text);
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(path + ": " + e.what());
    }
    return s;
}

std::size_t resolve_budget(std::size_t n, const std::optional<std::size_t>& k, const std::optional<double>& ratio) {
    if (k && ratio) throw UsageError("give either --K or --share-ratio, not both");
    if (!k && !ratio) throw UsageError("an anchor budget is required (--K or --share-ratio)");
    if (ratio) {
        if (!(*ratio >= 0.0 && *ratio < 1.0)) throw UsageError("--share-ratio must lie in [0, 1)");
        return budget_for_ratio(n, *ratio);
    }
    if (*k < 1 || *k > n) {
        throw UsageError("--K must lie in [1, " + std::to_string(n) + "], got " + std::to_string(*k));
    }
    return *k;
}

SharingPlan make_plan(const std::string& strategy, std::size_t n, std::size_t k, const SimilarityMatrix* s) {
    if (strategy == "uniform") {
        SharingPlan p = plan_uniform(n, k);
        if (s != nullptr) p.utility = plan_utility(*s, p.anchors);
        return p;
    }
    if (s == nullptr) throw UsageError("strategy '" + strategy + "' needs a similarity matrix");
    if (strategy == "dp") return plan_dp(*s, k);
    if (strategy == "bruteforce") {
        if (n > kBruteforceLimit) {
            throw UsageError("bruteforce is limited to N <= " + std::to_string(kBruteforceLimit));
        }
        return plan_bruteforce(*s, k);
    }
    throw UsageError("--strategy must be uniform, dp or bruteforce");
}

std::string matrix_csv(const SimilarityMatrix& s) {
    std::ostringstream os;
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = 0; j < s.n; ++j) os << (j ? "," : "") << num(s(i, j));
        os << '\n';
    }
    return os.str();
}

void finish(const fs::path& manifest_path, RunManifest& manifest) {
    write_atomic(manifest_path, manifest.to_text());
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& log) {
    RunManifest manifest;
    manifest.command = "train";
    manifest.config_path = args.config_path;
    TrainConfig cfg;
    if (!args.config_path.empty()) {
        const std::string text = read_file(args.config_path);
        manifest.add_input(args.config_path, text);
        cfg = TrainConfig::from_key_values(parse_key_values(text));
    }
    if (args.seed) cfg.seed = *args.seed;
    if (args.steps) cfg.steps = *args.steps;
    cfg.validate();
    manifest.seed = cfg.seed;
    if (args.out_dir.empty()) throw UsageError("--out is required");

    const fs::path metrics_path = args.out_dir / "metrics.csv";
    std::string metrics = "step,loss_dec,loss_enc,total,skipped\n";
    std::unique_ptr<Trainer> trainer;
    if (!args.resume.empty()) {
        Checkpoint ck = load_checkpoint(args.resume, manifest);
        trainer = std::make_unique<Trainer>(cfg, ck);
        // Keep the rows of the run being continued.
        if (fs::exists(metrics_path)) {
            std::istringstream in(read_file(metrics_path));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                if (std::stoull(line.substr(0, line.find(','))) < trainer->current_step()) metrics += line + '\n';
            }
        }
    } else {
        trainer = std::make_unique<Trainer>(cfg);
    }

    const std::size_t every = std::max<std::size_t>(1, cfg.steps / 10);
    trainer->run([&](std::uint64_t step, const LossReport& r) {
        metrics += std::to_string(step) + ',' + num(r.loss_dec) + ',' + num(r.loss_enc) + ',' + num(r.total) + ',' +
                   (r.skipped ? "1" : "0") + '\n';
        if (r.skipped) log << "step " << step << " skipped: " << r.diagnostic << '\n';
        if (step % every == 0 || step + 1 == cfg.steps) {
            log << "step " << step << " loss_dec " << r.loss_dec << " loss_enc " << r.loss_enc << '\n';
        }
    });

    const fs::path ckpt_path = args.out_dir / "checkpoint.ddt";
    write_atomic(ckpt_path, serialize_checkpoint(trainer->checkpoint()));
    write_atomic(metrics_path, metrics);
    manifest.outputs = {ckpt_path.string(), metrics_path.string()};
    manifest.settings = cfg.to_key_values();
    finish(args.out_dir / "manifest.txt", manifest);
    return kOk;
}

int cmd_sample(const SampleArgs& args, std::ostream& log) {
    if (args.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (args.out_dir.empty()) throw UsageError("--out is required");
    if (args.samples < 2) throw UsageError("--samples must be at least 2");
    if (args.steps == 0) throw UsageError("--steps must be positive");
    if (!(args.shift >= 1.0)) throw UsageError("--shift must be >= 1");
    RunManifest manifest;
    manifest.command = "sample";
    manifest.seed = args.seed;
    const Checkpoint ck = load_checkpoint(args.checkpoint, manifest);
    const DDTModel model = model_from_checkpoint(ck);
    const ModelConfig& mc = model.config();

    DDTSampling settings{make_timegrid(args.steps, args.shift), solver_arg(args.solver),
                         guidance_arg(args.cfg_w, args.cfg_interval)};

    std::optional<SharingPlan> plan;
    if (!args.plan.empty()) {
        if (args.share_ratio) throw UsageError("give either --plan or --share-ratio, not both");
        const std::string text = read_file(args.plan);
        manifest.add_input(args.plan, text);
        plan = parse_plan(text);
        if (plan->n != args.steps) {
            throw DataError("plan covers N=" + std::to_string(plan->n) + " steps but --steps is " +
                            std::to_string(args.steps));
        }
    } else if (args.share_ratio) {
        const std::size_t k = resolve_budget(args.steps, std::nullopt, args.share_ratio);
        std::optional<SimilarityMatrix> s;
        if (!args.similarity.empty()) {
            s = load_similarity(args.similarity, manifest);
            if (s->n != args.steps) throw DataError("similarity matrix size does not match --steps");
        } else if (args.strategy != "uniform") {
            s = probe(model, args.seed, args.probe_samples, settings.grid, settings.solver);
        }
        plan = make_plan(args.strategy, args.steps, k, s ? &*s : nullptr);
    }

    Rng rng = Rng::stream(args.seed, "sample", 0);
    Tensor x0 = gaussian(rng, image_shape(mc, args.samples));
    const std::vector<int> labels = cycle_labels(args.samples, mc.num_classes);
    Trajectory trajectory;
    model.counters().reset();
    Tensor samples = plan ? sample_with_sharing(model, x0, labels, settings, *plan, &trajectory)
                          : sample_full(model, x0, labels, settings, &trajectory);
    const std::size_t branches = settings.guidance.active() ? 2 : 1;
    const NfeCount expected = expected_nfe(args.steps, plan ? plan->k : args.steps, branches);
    EvalReport report;
    report.nfe_encoder = model.counters().encoder;
    report.nfe_decoder = model.counters().decoder;
    if (report.nfe_encoder != expected.encoder || report.nfe_decoder != expected.decoder) {
        throw std::logic_error("forward counts disagree with the closed-form accounting");
    }

    const TrainConfig tc = train_config_of(ck, args.seed);
    const SyntheticDataset dataset = make_dataset(tc);
    Rng held_rng = Rng::stream(tc.seed, "heldout", 0);
    Tensor held = dataset.sample(held_rng, args.samples).x;
    if (held.shape() != samples.shape()) throw DataError("checkpoint model and its dataset disagree on image shape");
    report.mmd = mmd_rbf(samples, held, median_sq_distance(held));
    report.spectral_distance = spectral_distance(samples, held);

    Checkpoint out;
    out.header["kind"] = "samples";
    out.header["steps"] = std::to_string(args.steps);
    out.header["solver"] = to_string(settings.solver);
    out.blocks.emplace_back("samples", samples);
    std::vector<double> y(labels.begin(), labels.end());
    out.blocks.emplace_back("labels", Tensor::from({labels.size()}, std::move(y)));

    const fs::path samples_path = args.out_dir / "samples.ddt";
    const fs::path eval_path = args.out_dir / "eval.txt";
    write_atomic(samples_path, serialize_checkpoint(out));
    write_atomic(eval_path, report.to_text());
    manifest.outputs = {samples_path.string(), eval_path.string()};
    if (plan) {
        const fs::path plan_path = args.out_dir / "plan.txt";
        write_atomic(plan_path, format_plan(*plan));
        manifest.outputs.push_back(plan_path.string());
    }
    if (args.trajectory) {
        const fs::path tpath = args.out_dir / "trajectory.csv";
        write_atomic(tpath, trajectory_csv(trajectory));
        manifest.outputs.push_back(tpath.string());
    }
    manifest.settings = {{"steps", std::to_string(args.steps)},
                         {"shift", num(args.shift)},
                         {"solver", args.solver},
                         {"cfg_w", num(args.cfg_w)},
                         {"cfg_interval", num(args.cfg_interval[0]) + " " + num(args.cfg_interval[1])},
                         {"samples", std::to_string(args.samples)}};
    if (plan) manifest.settings["anchors"] = std::to_string(plan->k);
    finish(args.out_dir / "manifest.txt", manifest);
    log << report.to_text();
    return kOk;
}

int cmd_plan(const PlanArgs& args, std::ostream& log) {
    if (args.out.empty()) throw UsageError("--out is required");
    RunManifest manifest;
    manifest.command = "plan";
    manifest.seed = args.seed;
    SimilarityMatrix s;
    if (!args.similarity.empty()) {
        if (!args.checkpoint.empty()) throw UsageError("give either --similarity or --checkpoint, not both");
        s = load_similarity(args.similarity, manifest);
    } else if (!args.checkpoint.empty()) {
        if (args.steps == 0) throw UsageError("--steps must be positive");
        if (!(args.shift >= 1.0)) throw UsageError("--shift must be >= 1");
        const DDTModel model = model_from_checkpoint(load_checkpoint(args.checkpoint, manifest));
        s = probe(model, args.seed, args.probe_samples, make_timegrid(args.steps, args.shift), solver_arg(args.solver));
    } else {
        throw UsageError("plan needs --similarity or --checkpoint");
    }
    const std::size_t k = resolve_budget(s.n, args.k, args.share_ratio);
    const SharingPlan plan = make_plan(args.strategy, s.n, k, &s);
    const std::string checksum = similarity_checksum(s);
    write_atomic(args.out, format_plan(plan, checksum));
    manifest.outputs = {args.out.string()};
    if (!args.similarity_out.empty()) {
        write_atomic(args.similarity_out, format_similarity(s, "checksum " + checksum));
        manifest.outputs.push_back(args.similarity_out);
    }
    manifest.settings = {{"strategy", args.strategy}, {"K", std::to_string(k)}};
    fs::path mpath = args.out;
    mpath += ".manifest";
    finish(mpath, manifest);
    log << "anchors:";
    for (std::size_t a : plan.anchors) log << ' ' << a;
    log << "\nutility: " << num(plan.utility) << '\n';
    return kOk;
}

int cmd_diagnose(const DiagnoseArgs& args, std::ostream& log) {
    if (args.out_dir.empty()) throw UsageError("--out is required");
    if (args.checkpoint.empty() == args.dataset.empty()) throw UsageError("give exactly one of --checkpoint or --dataset");
    if (args.images == 0 || args.draws == 0) throw UsageError("--images and --draws must be positive");
    for (double t : args.t_list) {
        if (!(t >= 0.0 && t < 1.0)) throw UsageError("--t values must lie in [0, 1)");
    }
    RunManifest manifest;
    manifest.command = "diagnose";
    manifest.seed = args.seed;

    std::optional<DDTModel> model;
    TrainConfig tc;
    if (!args.checkpoint.empty()) {
        const Checkpoint ck = load_checkpoint(args.checkpoint, manifest);
        model.emplace(model_from_checkpoint(ck));
        tc = train_config_of(ck, args.seed);
    } else {
        tc.seed = args.seed;
        tc.dataset = parse_dataset_kind(args.dataset);
    }
    const SyntheticDataset dataset = make_dataset(tc);
    Rng data_rng = Rng::stream(args.seed, "diagnose", 0);
    const Tensor data = dataset.sample(data_rng, args.images).x;
    const SpectrumProfile clean = SpectrumProfile::from_data(mean_radial_spectrum(data));

    for (std::size_t i = 0; i < args.t_list.size(); ++i) {
        const double t = args.t_list[i];
        Rng rng = Rng::stream(args.seed, "spectrum", i);
        const auto empirical = monte_carlo_spectrum(data, t, args.draws, rng);
        const SpectrumProfile analytic = expected_spectrum(clean, t);
        char name[40];
        std::snprintf(name, sizeof name, "spectrum_t%.3f.csv", t);
        const fs::path p = args.out_dir / name;
        write_atomic(p, spectrum_csv(analytic, empirical));
        manifest.outputs.push_back(p.string());
        log << "t=" << t << " retained " << measured_retained_frequency(empirical, t) << " (bound "
            << lemma_bound(t, k_freq(clean)) << ")\n";
    }
    if (model) {
        const SimilarityMatrix s = probe(*model, args.seed, args.probe_samples, make_timegrid(args.steps, args.shift),
                                         solver_arg(args.solver));
        const fs::path csv = args.out_dir / "similarity.csv";
        const fs::path txt = args.out_dir / "similarity.txt";
        write_atomic(csv, matrix_csv(s));
        write_atomic(txt, format_similarity(s));
        manifest.outputs.push_back(csv.string());
        manifest.outputs.push_back(txt.string());
        const SimilaritySummary sum = summarize_similarity(s);
        log << "similarity adjacent " << sum.adjacent << " far " << sum.far << '\n';
    }
    finish(args.out_dir / "manifest.txt", manifest);
    return kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Decoupled diffusion transformer toolkit"};
    app.require_subcommand(1);

    TrainArgs ta;
    std::uint64_t train_seed = 0;
    std::size_t train_steps = 0;
    std::string out_dir;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", ta.config_path, "key=value training config");
    auto* ts = train->add_option("--seed", train_seed);
    auto* tn = train->add_option("--steps", train_steps, "optimizer steps");
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", ta.resume, "checkpoint to continue from");

    SampleArgs sa;
    std::string sample_out;
    double sample_ratio = 0.0;
    auto* sample = app.add_subcommand("sample", "Generate samples from a checkpoint");
    sample->add_option("--checkpoint", sa.checkpoint)->required();
    sample->add_option("--seed", sa.seed);
    sample->add_option("--steps", sa.steps, "sampler steps N");
    sample->add_option("--shift", sa.shift);
    sample->add_option("--solver", sa.solver);
    sample->add_option("--cfg-w", sa.cfg_w);
    sample->add_option("--cfg-interval", sa.cfg_interval)->expected(2);
    sample->add_option("--plan", sa.plan);
    auto* sr = sample->add_option("--share-ratio", sample_ratio);
    sample->add_option("--strategy", sa.strategy);
    sample->add_option("--similarity", sa.similarity);
    sample->add_option("--samples", sa.samples);
    sample->add_option("--probe-samples", sa.probe_samples);
    sample->add_flag("--trajectory", sa.trajectory);
    sample->add_option("--out", sample_out)->required();

    PlanArgs pa;
    std::string plan_out;
    std::size_t plan_k = 0;
    double plan_ratio = 0.0;
    auto* plan = app.add_subcommand("plan", "Choose encoder anchor steps");
    plan->add_option("--similarity", pa.similarity);
    plan->add_option("--checkpoint", pa.checkpoint);
    plan->add_option("--seed", pa.seed);
    plan->add_option("--steps", pa.steps);
    plan->add_option("--shift", pa.shift);
    plan->add_option("--solver", pa.solver);
    auto* pk = plan->add_option("--K", plan_k);
    auto* pr = plan->add_option("--share-ratio", plan_ratio);
    plan->add_option("--strategy", pa.strategy);
    plan->add_option("--probe-samples", pa.probe_samples);
    plan->add_option("--similarity-out", pa.similarity_out);
    plan->add_option("--out", plan_out)->required();

    DiagnoseArgs da;
    std::string diag_out;
    auto* diag = app.add_subcommand("diagnose", "Spectra and similarity CSVs");
    diag->add_option("--checkpoint", da.checkpoint);
    diag->add_option("--dataset", da.dataset);
    diag->add_option("--seed", da.seed);
    diag->add_option("--t", da.t_list);
    diag->add_option("--images", da.images);
    diag->add_option("--draws", da.draws);
    diag->add_option("--steps", da.steps);
    diag->add_option("--shift", da.shift);
    diag->add_option("--solver", da.solver);
    diag->add_option("--probe-samples", da.probe_samples);
    diag->add_option("--out", diag_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (train->parsed()) {
            if (*ts) ta.seed = train_seed;
            if (*tn) ta.steps = train_steps;
            ta.out_dir = out_dir;
            return cmd_train(ta, out);
        }
        if (sample->parsed()) {
            if (*sr) sa.share_ratio = sample_ratio;
            sa.out_dir = sample_out;
            return cmd_sample(sa, out);
        }
        if (plan->parsed()) {
            if (*pk) pa.k = plan_k;
            if (*pr) pa.share_ratio = plan_ratio;
            pa.out = plan_out;
            return cmd_plan(pa, out);
        }
        da.out_dir = diag_out;
        return cmd_diagnose(da, out);
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kData;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace ddt::cli
