// pdno: data generation, training, sampling and evaluation entry points.
//
// Exit codes: 0 success, 1 validation or usage error, 2 I/O error. Diagnostics go to stderr;
// results are written only to the --out / --report paths.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pdno/pdno.hpp"

namespace fs = std::filesystem;
using namespace pdno;

namespace {

struct GenArgs {
    std::string problem;
    int n = 0, m = 0;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    std::string out;
};

struct TrainArgs {
    std::string data, config, out;
};

struct SampleArgs {
    std::string ckpt, data, out;
    std::size_t index = 0;
    int num_samples = 1;
    std::uint64_t seed = 0;
};

struct EvalArgs {
    std::string ckpt, data, report, config;
    int num_samples = 1;
    std::uint64_t seed = 0;
};

struct HistArgs {
    std::string ckpt, data, out;
    int x1 = 0, x2 = 0, bins = 20;
    std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a) {
    const auto ds = build_dataset(parse_problem(a.problem), a.n, a.m, a.seed, {a.sigma});
    write_dataset(ds, a.out);
    std::cerr << "wrote " << ds.n() << " pairs (" << a.problem << ", m=" << a.m << ") to " << a.out << "\n";
    return 0;
}

int cmd_train(const TrainArgs& a) {
    const auto rc = load_run_config(a.config);
    const auto ds = read_dataset(a.data);
    rc.arch.check_length(static_cast<std::size_t>(ds.grid.m));
    detail::ensure_directory(a.out);
    const auto log_path = fs::path(a.out) / "train_log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError(log_path.string(), "cannot open for writing");
    const auto tm = train<float>(ds, rc.arch, rc.schedule(), rc.train, [&](const EpochRecord& r) {
        log << to_json(r).dump() << "\n" << std::flush;
        std::cerr << "epoch " << r.epoch << "/" << rc.train.epochs << "  loss " << r.mean_loss << "  lr " << r.lr
                  << "  " << static_cast<long>(r.wall_ms) << " ms\n";
    });
    if (!log) throw IoError(log_path.string(), "write failed");
    save_checkpoint(tm, a.out, to_json(rc));
    std::cerr << "checkpoint written to " << a.out << "\n";
    return 0;
}

// Eval settings stored with the checkpoint, optionally replaced by a config file.
RunConfig eval_config(const fs::path& ckpt, const std::string& override_path) {
    if (!override_path.empty()) return load_run_config(override_path);
    const auto man = detail::read_json_file(ckpt / "manifest.json");
    if (man.contains("train_config") && !man.at("train_config").empty())
        return run_config_from_json(man.at("train_config"));
    return {};
}

int cmd_sample(const SampleArgs& a) {
    const auto tm = load_checkpoint(a.ckpt);
    const auto ds = read_dataset(a.data);
    require(a.index < ds.n(), "sample: --index " + std::to_string(a.index) + " out of range (n = " +
                                  std::to_string(ds.n()) + ")");
    require(a.num_samples >= 1, "sample: --num-samples must be >= 1");
    const bool clip = eval_config(a.ckpt, "").clip_denoised;
    NetPredictor<float> net(tm.pred);
    const auto fields = sample_conditional(net, tm.sched, tm.cov, ds.input(a.index), a.num_samples, a.seed,
                                           sample_options_for(tm, clip));
    std::vector<std::vector<double>> rows;
    for (const auto& f : fields) rows.push_back(f.values);
    detail::ensure_directory(a.out);
    const fs::path out(a.out);
    detail::write_rows(out / "samples.f64", rows);
    detail::write_rows(out / "mean.f64", {pointwise_mean(rows)});
    detail::write_rows(out / "std.f64", {pointwise_std(rows)});
    const nlohmann::json man{{"format_version", "1"},
                             {"index", a.index},
                             {"num_samples", a.num_samples},
                             {"m", ds.grid.m},
                             {"lo", ds.grid.lo},
                             {"hi", ds.grid.hi},
                             {"seed", a.seed},
                             {"cov_mode", to_json(tm.cov)},
                             {"clip_denoised", clip},
                             {"files", {"samples.f64", "mean.f64", "std.f64"}}};
    detail::write_text_file(out / "manifest.json", man.dump(2) + "\n");
    std::cerr << "wrote " << a.num_samples << " samples for input " << a.index << " to " << a.out << "\n";
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    const auto tm = load_checkpoint(a.ckpt);
    const auto ds = read_dataset(a.data);
    const auto rc = eval_config(a.ckpt, a.config);
    NetPredictor<float> net(tm.pred);
    EvalOptions opts;
    opts.mstd_sqrt_n = rc.mstd_sqrt_n;
    opts.store_fields = rc.store_fields;
    opts.sampling = sample_options_for(tm, rc.clip_denoised);
    const auto r = evaluate(net, tm.sched, tm.cov, ds, a.num_samples, a.seed, opts);
    write_eval_report(r, a.report);
    std::cerr << "mrle " << r.mrle << "  mstd " << (r.mstd_defined ? std::to_string(r.mstd) : "undefined (N_s = 1)")
              << "  -> " << a.report << "\n";
    return 0;
}

int cmd_hist(const HistArgs& a) {
    const auto tm = load_checkpoint(a.ckpt);
    const auto ds = read_dataset(a.data);
    std::vector<Field> inputs;
    for (std::size_t i = 0; i < ds.n(); ++i) inputs.push_back(ds.input(i));
    NetPredictor<float> net(tm.pred);
    const auto problem = parse_problem(ds.meta.problem);
    const auto exact = [problem](const Field& f) {
        return problem == Problem::elliptic1d ? solve_elliptic1d(f) : solve_advection1d(f, kAdvectionFinalTime);
    };
    const bool clip = eval_config(a.ckpt, "").clip_denoised;
    const auto h = joint_histogram(net, tm.sched, tm.cov, inputs, a.x1, a.x2, a.bins, a.seed, exact,
                                   sample_options_for(tm, clip));
    const fs::path out(a.out);
    if (out.has_parent_path()) detail::ensure_directory(out.parent_path());
    detail::write_text_file(out, histogram_csv(h));
    std::cerr << "wrote " << a.bins << "x" << a.bins << " histograms over " << ds.n() << " inputs to " << a.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic diffusion neural operator: data, training, sampling and evaluation"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a dataset of (input, solution) pairs");
    g->add_option("--problem", gen.problem, "elliptic1d or advection1d")->required();
    g->add_option("--n", gen.n, "Number of pairs")->required();
    g->add_option("--m", gen.m, "Grid points")->required();
    g->add_option("--seed", gen.seed, "Base seed")->required();
    g->add_option("--sigma", gen.sigma, "Absolute output noise level");
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a noise predictor");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--config", tr.config, "Run configuration JSON")->required();
    t->add_option("--out", tr.out, "Checkpoint directory")->required();

    SampleArgs sa;
    auto* s = app.add_subcommand("sample", "Draw samples for one dataset input");
    s->add_option("--ckpt", sa.ckpt, "Checkpoint directory")->required();
    s->add_option("--data", sa.data, "Dataset directory")->required();
    s->add_option("--index", sa.index, "Input index")->required();
    s->add_option("--num-samples", sa.num_samples, "Samples to draw")->required();
    s->add_option("--seed", sa.seed, "Sampling seed")->required();
    s->add_option("--out", sa.out, "Output directory")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Compute MRLE and MSTD on a test set");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint directory")->required();
    e->add_option("--data", ev.data, "Test dataset directory")->required();
    e->add_option("--num-samples", ev.num_samples, "Samples per input (N_s)")->required();
    e->add_option("--seed", ev.seed, "Sampling seed")->required();
    e->add_option("--report", ev.report, "Report JSON path")->required();
    e->add_option("--config", ev.config, "Config whose eval section replaces the checkpoint's");

    HistArgs hi;
    auto* h = app.add_subcommand("hist2d", "Joint histogram of the solution at two nodes, model vs exact");
    h->add_option("--ckpt", hi.ckpt, "Checkpoint directory")->required();
    h->add_option("--data", hi.data, "Dataset directory")->required();
    h->add_option("--x1", hi.x1, "First node index")->required();
    h->add_option("--x2", hi.x2, "Second node index")->required();
    h->add_option("--bins", hi.bins, "Bins per axis")->required();
    h->add_option("--seed", hi.seed, "Sampling seed")->required();
    h->add_option("--out", hi.out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cerr << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cerr << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }

    try {
        if (g->parsed()) return cmd_gen(gen);
        if (t->parsed()) return cmd_train(tr);
        if (s->parsed()) return cmd_sample(sa);
        if (e->parsed()) return cmd_eval(ev);
        if (h->parsed()) return cmd_hist(hi);
    } catch (const IoError& err) {
        std::cerr << "io error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 1;
}
