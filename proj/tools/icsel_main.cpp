// Command-line front end: every pipeline stage as a standalone verb, plus a
// fixture generator and debugging helpers.

#include <CLI11.hpp>

#include "icsel/icsel.hpp"

namespace {

using namespace icsel;

Dataset load_cli_dataset(const std::string& descriptor, bool unlabeled) {
  Dataset ds = load_dataset(descriptor);
  if (unlabeled) ds = build_unlabeled(ds);
  return ds;
}

std::vector<int> parse_id_list(const std::string& csv) {
  std::vector<int> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"valuation and stable-subset selection for in-context learning"};
  app.require_subcommand(1);

  // --- synth-data ------------------------------------------------------------
  auto* synth = app.add_subcommand(
      "synth-data", "generate a synthetic corpus, descriptor, and oracle backend");
  std::string synth_out = "synth";
  int synth_train = 20, synth_dev = 10, synth_test = 10, synth_classes = 2,
      synth_k = 4;
  uint64_t synth_seed = 1;
  double synth_noise = 0.0, synth_scale = 0.1;
  synth->add_option("--out-dir", synth_out, "output directory");
  synth->add_option("--train-per-class", synth_train);
  synth->add_option("--dev-per-class", synth_dev);
  synth->add_option("--test-per-class", synth_test);
  synth->add_option("--classes", synth_classes);
  synth->add_option("--k", synth_k);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--noise-std", synth_noise);
  synth->add_option("--weight-scale", synth_scale);
  synth->callback([&] {
    namespace fs = std::filesystem;
    fs::create_directories(synth_out);
    Dataset ds = make_oracle_dataset(synth_train, synth_dev, synth_test,
                                     synth_classes, synth_k, synth_seed);
    std::string lines;
    auto emit = [&](const std::vector<TrainingExample>& split) {
      for (const auto& ex : split)
        lines += json{{"id", ex.source_id},
                      {"input", json{{"text", ex.field("text")}}},
                      {"label", ex.label}}
                     .dump() +
                 "\n";
    };
    emit(ds.train);
    emit(ds.dev);
    emit(ds.test);
    write_text_file(fs::path(synth_out) / "examples.jsonl", lines);

    DatasetDescriptor desc;
    desc.name = "oracle";
    desc.template_text = ds.template_text;
    desc.verbalizers = ds.verbalizers;
    desc.fields = ds.fields;
    desc.k = synth_k;
    desc.train_per_class = synth_train;
    desc.dev_per_class = synth_dev;
    desc.test_per_class = synth_test;
    desc.seed = synth_seed;
    desc.examples_file = "examples.jsonl";
    write_json_file(fs::path(synth_out) / "descriptor.json", desc.to_json());

    SyntheticOracleSpec oracle = SyntheticOracleSpec::random(
        synth_train * synth_classes, synth_k, synth_classes, synth_seed,
        synth_scale, synth_noise);
    write_json_file(fs::path(synth_out) / "backend.json",
                    json{{"kind", "synthetic"}, {"oracle", oracle.to_json()}});
    std::cout << "wrote " << synth_out << "/{examples.jsonl,descriptor.json,backend.json}\n";
  });

  // --- render ----------------------------------------------------------------
  auto* render_cmd = app.add_subcommand("render", "dump a rendered prompt");
  std::string render_ds_path, render_ids_csv = "", render_split = "dev",
              render_probe_text;
  int render_query = 0;
  bool render_unlabeled = false, render_use_probe = false;
  render_cmd->add_option("--dataset", render_ds_path, "dataset descriptor")->required();
  render_cmd->add_option("--ids", render_ids_csv, "comma-separated train ids");
  render_cmd->add_option("--query-split", render_split, "dev or test");
  render_cmd->add_option("--query-index", render_query);
  render_cmd->add_option("--probe", render_probe_text, "content-free query text");
  render_cmd->add_flag("--use-probe", render_use_probe);
  render_cmd->add_flag("--unlabeled", render_unlabeled);
  render_cmd->callback([&] {
    Dataset ds = load_cli_dataset(render_ds_path, render_unlabeled);
    std::vector<int> ids = parse_id_list(render_ids_csv);
    RenderedPrompt rp;
    if (render_use_probe) {
      rp = render_probe(ids, render_probe_text, ds);
    } else {
      const auto& split = render_split == "test" ? ds.test : ds.dev;
      if (render_query < 0 || render_query >= static_cast<int>(split.size()))
        throw ConfigError("render: query index out of range");
      rp = render(ids, split[static_cast<size_t>(render_query)], ds);
    }
    std::cout << rp.text << "\n---\ncandidates:";
    for (const auto& c : rp.label_candidates) std::cout << " '" << c << "'";
    std::cout << "\ngold: " << rp.test_gold << "\n";
  });

  // --- collect ---------------------------------------------------------------
  auto* collect_cmd = app.add_subcommand("collect", "sample and score a prompt pool");
  std::string col_ds, col_backend, col_out;
  long col_m = 1000, col_heldout = 0;
  int col_k = -1, col_minocc = 20, col_workers = 1;
  uint64_t col_seed = 0;
  bool col_balanced = false, col_unlabeled = false;
  collect_cmd->add_option("--dataset", col_ds)->required();
  collect_cmd->add_option("--backend", col_backend)->required();
  collect_cmd->add_option("--out-dir", col_out)->required();
  collect_cmd->add_option("--m", col_m, "number of prompts");
  collect_cmd->add_option("--k", col_k, "prompt length (default: descriptor k)");
  collect_cmd->add_option("--min-occurrence", col_minocc);
  collect_cmd->add_option("--heldout-n", col_heldout, "also collect this many unseen-combination prompts");
  collect_cmd->add_option("--seed", col_seed)->required();
  collect_cmd->add_option("--workers", col_workers);
  collect_cmd->add_flag("--balanced", col_balanced);
  collect_cmd->add_flag("--unlabeled", col_unlabeled);
  collect_cmd->callback([&] {
    Dataset ds = load_cli_dataset(col_ds, col_unlabeled);
    BackendHandle backend = make_backend(BackendDescriptor::from_file(col_backend), &ds);
    verify_single_token_verbalizers(ds, backend.get());
    SampleOptions sopts;
    sopts.k = col_k > 0 ? col_k : ds.k;
    sopts.m = col_m;
    sopts.balanced = col_balanced;
    sopts.seed = col_seed;
    sopts.min_occurrence = col_minocc;
    CollectOptions copts;
    copts.out_dir = (std::filesystem::path(col_out) / "pool").string();
    copts.workers = col_workers;
    PromptPool pool = collect(sample_pool(ds, sopts), ds, backend.get(), sopts, copts);
    std::cout << "pool: " << pool.records.size() << " records -> " << copts.out_dir << "\n";
    if (col_heldout > 0) {
      SampleOptions hopts = sopts;
      hopts.m = col_heldout;
      hopts.seed = mix_seed(col_seed, fnv1a("heldout"));
      hopts.min_occurrence = 0;
      CollectOptions hcopts;
      hcopts.out_dir = (std::filesystem::path(col_out) / "heldout").string();
      hcopts.workers = col_workers;
      auto hp = sample_heldout_pool(ds, sopts.k, col_heldout, pool, hopts.seed);
      PromptPool heldout = collect(hp, ds, backend.get(), hopts, hcopts);
      std::cout << "heldout: " << heldout.records.size() << " records -> "
                << hcopts.out_dir << "\n";
    }
  });

  // --- score -----------------------------------------------------------------
  auto* score_cmd = app.add_subcommand("score", "value train examples from a pool");
  std::string sc_pool, sc_method = "condacc", sc_out, sc_suite, sc_ds, sc_backend;
  double sc_lambda = 1e-6;
  long sc_threshold = 50;
  int sc_workers = 1;
  bool sc_unlabeled = false, sc_phase1_only = false, sc_avg = false;
  score_cmd->add_option("--pool", sc_pool, "pool directory");
  score_cmd->add_option("--method", sc_method, "condacc | shapley | datamodels | oneshot");
  score_cmd->add_option("--out", sc_out)->required();
  score_cmd->add_option("--suite-dir", sc_suite, "where to save fitted datamodels");
  score_cmd->add_option("--lambda", sc_lambda);
  score_cmd->add_option("--bucket-threshold", sc_threshold);
  score_cmd->add_option("--dataset", sc_ds, "needed for oneshot");
  score_cmd->add_option("--backend", sc_backend, "needed for oneshot");
  score_cmd->add_option("--workers", sc_workers);
  score_cmd->add_flag("--unlabeled", sc_unlabeled);
  score_cmd->add_flag("--phase1-only", sc_phase1_only, "skip pattern buckets when scoring");
  score_cmd->add_flag("--average-weights", sc_avg, "average weights instead of counting positives");
  score_cmd->callback([&] {
    ScoreVector sv;
    if (sc_method == "oneshot") {
      if (sc_ds.empty() || sc_backend.empty())
        throw ConfigError("score oneshot: --dataset and --backend required");
      Dataset ds = load_cli_dataset(sc_ds, sc_unlabeled);
      BackendHandle backend = make_backend(BackendDescriptor::from_file(sc_backend), &ds);
      verify_single_token_verbalizers(ds, backend.get());
      sv = oneshot_scores(ds, backend.get(), sc_workers);
    } else {
      if (sc_pool.empty()) throw ConfigError("score: --pool required");
      PromptPool pool = load_pool(sc_pool);
      if (sc_method == "condacc") {
        sv = condacc_scores(pool);
      } else if (sc_method == "shapley") {
        sv = shapley_scores(condacc_scores(pool), pool);
      } else if (sc_method == "datamodels") {
        RidgeOptions ropts;
        ropts.lambda = sc_lambda;
        ropts.bucket_threshold = sc_threshold;
        DatamodelSuite suite = fit_suite(pool, ropts);
        if (!sc_suite.empty()) save_suite(suite, sc_suite);
        DmScoreOptions dopts;
        dopts.per_bucket = !sc_phase1_only;
        dopts.count_positive = !sc_avg;
        sv = datamodels_scores(suite, dopts);
      } else {
        throw ConfigError("score: unknown method " + sc_method);
      }
    }
    save_scores(sv, sc_out);
    std::cout << "scores: " << sv.size() << " examples -> " << sc_out << "\n";
  });

  // --- dm-eval ---------------------------------------------------------------
  auto* dmeval = app.add_subcommand("dm-eval", "held-out fit quality of a datamodel suite");
  std::string de_suite, de_pool, de_out;
  bool de_phase1 = false;
  dmeval->add_option("--suite", de_suite)->required();
  dmeval->add_option("--heldout-pool", de_pool)->required();
  dmeval->add_option("--out", de_out, "write the report here as JSON");
  dmeval->add_flag("--phase1-only", de_phase1);
  dmeval->callback([&] {
    DatamodelSuite suite = load_suite(de_suite);
    PromptPool heldout = load_pool(de_pool);
    HeldoutReport rep = heldout_eval(suite, heldout, !de_phase1);
    std::cout << rep.to_json().dump(2) << "\n";
    if (!de_out.empty()) write_json_file(de_out, rep.to_json());
  });

  // --- dm-embed --------------------------------------------------------------
  auto* dmembed = app.add_subcommand("dm-embed", "export datamodel embeddings and a 2D projection");
  std::string em_suite, em_out, em_proj;
  dmembed->add_option("--suite", em_suite)->required();
  dmembed->add_option("--out", em_out)->required();
  dmembed->add_option("--projection", em_proj, "also write a 2D projection CSV");
  dmembed->callback([&] {
    DatamodelSuite suite = load_suite(em_suite);
    auto emb = datamodel_embeddings(suite);
    save_embeddings(emb, em_out);
    std::cout << "embeddings: " << emb.size() << " x " << emb.front().size()
              << " -> " << em_out << "\n";
    if (!em_proj.empty()) {
      Projection2D proj = project_2d(emb);
      std::string csv = "id,x,y\n";
      for (size_t i = 0; i < proj.points.size(); ++i)
        csv += std::to_string(i) + "," + detail::num_str(proj.points[i][0]) +
               "," + detail::num_str(proj.points[i][1]) + "\n";
      write_text_file(em_proj, csv);
    }
  });

  // --- select ----------------------------------------------------------------
  auto* select_cmd = app.add_subcommand("select", "choose a train subset");
  std::string se_method = "top", se_scores, se_pool, se_ds, se_out;
  int se_e = 0, se_n = 10;
  uint64_t se_seed = 0;
  bool se_unlabeled = false, se_gold_swap = false;
  select_cmd->add_option("--method", se_method, "top | bottom | random | topprompts");
  select_cmd->add_option("--scores", se_scores, "score file for top/bottom");
  select_cmd->add_option("--pool", se_pool, "pool directory for topprompts");
  select_cmd->add_option("--dataset", se_ds)->required();
  select_cmd->add_option("--e", se_e, "subset size for top/bottom/random");
  select_cmd->add_option("--n", se_n, "prompt count for topprompts");
  select_cmd->add_option("--seed", se_seed, "seed for random");
  select_cmd->add_option("--out", se_out)->required();
  select_cmd->add_flag("--unlabeled", se_unlabeled);
  select_cmd->add_flag("--correct-labels", se_gold_swap,
                       "swap selected examples for their gold-labeled copies");
  select_cmd->callback([&] {
    Dataset ds = load_cli_dataset(se_ds, se_unlabeled);
    SubsetSpec subset;
    if (se_method == "top" || se_method == "bottom") {
      if (se_scores.empty()) throw ConfigError("select: --scores required");
      ScoreVector sv = load_scores(se_scores);
      subset = se_method == "top" ? select_top(sv, ds, se_e)
                                  : select_bottom(sv, ds, se_e);
      subset.source = se_scores;
    } else if (se_method == "random") {
      subset = select_random(ds, se_e, se_seed);
    } else if (se_method == "topprompts") {
      if (se_pool.empty()) throw ConfigError("select: --pool required");
      subset = select_topprompts(load_pool(se_pool), ds, se_n);
      subset.source = se_pool;
    } else {
      throw ConfigError("select: unknown method " + se_method);
    }
    if (se_gold_swap) subset = correct_labels(subset, ds);
    save_subset(subset, se_out);
    std::cout << "subset: " << subset.example_ids.size() << " examples ("
              << subset.method << ", " << count_gold(subset, ds)
              << " gold) -> " << se_out << "\n";
  });

  // --- eval ------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "prompt-stability evaluation of a subset");
  std::string ev_subset, ev_ds, ev_target, ev_backend, ev_out,
      ev_protocol = "standard";
  int ev_k = -1, ev_n = 50, ev_kmax = 0, ev_workers = 1;
  uint64_t ev_seed = 0;
  bool ev_calib = false, ev_unlabeled = false, ev_noconstraint = false;
  eval_cmd->add_option("--subset", ev_subset, "subset JSON (not needed for maxshot)");
  eval_cmd->add_option("--dataset", ev_ds)->required();
  eval_cmd->add_option("--target", ev_target, "target descriptor for ood");
  eval_cmd->add_option("--backend", ev_backend)->required();
  eval_cmd->add_option("--protocol", ev_protocol,
                       "standard | single-label | ood | maxshot");
  eval_cmd->add_option("--k", ev_k);
  eval_cmd->add_option("--k-max", ev_kmax, "prompt length for maxshot");
  eval_cmd->add_option("--n-prompts", ev_n);
  eval_cmd->add_option("--seed", ev_seed)->required();
  eval_cmd->add_option("--workers", ev_workers);
  eval_cmd->add_option("--out", ev_out)->required();
  eval_cmd->add_flag("--calibrate", ev_calib);
  eval_cmd->add_flag("--unlabeled", ev_unlabeled);
  eval_cmd->add_flag("--no-class-constraint", ev_noconstraint);
  eval_cmd->callback([&] {
    Dataset ds = load_cli_dataset(ev_ds, ev_unlabeled);
    BackendHandle backend = make_backend(BackendDescriptor::from_file(ev_backend), &ds);
    verify_single_token_verbalizers(ds, backend.get());
    EvalOptions opts;
    opts.k = ev_k > 0 ? ev_k : ds.k;
    opts.n_prompts = ev_n;
    opts.seed = ev_seed;
    opts.calibrate = ev_calib;
    opts.min_one_per_class = !ev_noconstraint;
    opts.workers = ev_workers;
    auto need_subset = [&] {
      if (ev_subset.empty()) throw ConfigError("eval: --subset required");
      return load_subset(ev_subset);
    };
    if (ev_protocol == "standard") {
      EvalReport rep = evaluate_subset(need_subset(), ds, backend.get(), opts);
      save_report(rep, ev_out);
      std::cout << "avg " << rep.avg << " std " << rep.std_dev << " min "
                << rep.min << " -> " << ev_out << "\n";
    } else if (ev_protocol == "single-label") {
      auto reps = evaluate_single_label(need_subset(), ds, backend.get(), opts);
      json out = json::object();
      for (const auto& [y, rep] : reps) out[std::to_string(y)] = rep.to_json();
      write_json_file(ev_out, out);
      for (const auto& [y, rep] : reps)
        std::cout << "class " << y << ": avg " << rep.avg << " min " << rep.min << "\n";
    } else if (ev_protocol == "ood") {
      if (ev_target.empty()) throw ConfigError("eval ood: --target required");
      Dataset target = load_dataset(ev_target);
      EvalReport rep = evaluate_ood(need_subset(), ds, target, backend.get(), opts);
      save_report(rep, ev_out);
      std::cout << "avg " << rep.avg << " min " << rep.min << " -> " << ev_out << "\n";
    } else if (ev_protocol == "maxshot") {
      if (ev_kmax < 1) throw ConfigError("eval maxshot: --k-max required");
      EvalReport rep = evaluate_maxshot(ds, backend.get(), ev_kmax, opts);
      save_report(rep, ev_out);
      std::cout << "avg " << rep.avg << " min " << rep.min << " -> " << ev_out << "\n";
    } else {
      throw ConfigError("eval: unknown protocol " + ev_protocol);
    }
  });

  // --- analyze ---------------------------------------------------------------
  auto* an_cmd = app.add_subcommand("analyze", "example profiles and subset diversity");
  std::string an_what = "profile", an_ds, an_backend, an_scores, an_subset,
      an_emb, an_out;
  long an_random = 5000;
  uint64_t an_seed = 0;
  bool an_unlabeled = false;
  an_cmd->add_option("--what", an_what, "profile | diversity");
  an_cmd->add_option("--dataset", an_ds)->required();
  an_cmd->add_option("--backend", an_backend, "needed for profile");
  an_cmd->add_option("--scores", an_scores, "needed for profile");
  an_cmd->add_option("--subset", an_subset, "needed for diversity");
  an_cmd->add_option("--embeddings", an_emb, "embedding JSONL for div_f");
  an_cmd->add_option("--n-random", an_random);
  an_cmd->add_option("--seed", an_seed);
  an_cmd->add_option("--out", an_out)->required();
  an_cmd->add_flag("--unlabeled", an_unlabeled);
  an_cmd->callback([&] {
    Dataset ds = load_cli_dataset(an_ds, an_unlabeled);
    if (an_what == "profile") {
      if (an_backend.empty() || an_scores.empty())
        throw ConfigError("analyze profile: --backend and --scores required");
      BackendHandle backend = make_backend(BackendDescriptor::from_file(an_backend), &ds);
      ProfileResult res =
          profile_examples(ds, backend.get(), load_scores(an_scores));
      save_profile_csv(res, an_out);
      std::cout << "profile -> " << an_out;
      if (res.r_length) std::cout << " (r_length " << *res.r_length << ")";
      if (res.r_perplexity) std::cout << " (r_ppl " << *res.r_perplexity << ")";
      std::cout << "\n";
    } else if (an_what == "diversity") {
      if (an_subset.empty()) throw ConfigError("analyze diversity: --subset required");
      SubsetSpec subset = load_subset(an_subset);
      std::vector<std::vector<double>> emb;
      if (!an_emb.empty()) emb = load_embeddings(an_emb);
      DiversityReport rep = diversity_report(subset, ds, an_random, an_seed,
                                             an_emb.empty() ? nullptr : &emb);
      write_json_file(an_out, rep.to_json());
      std::cout << rep.to_json().dump(2) << "\n";
    } else {
      throw ConfigError("analyze: unknown target " + an_what);
    }
  });

  // --- pipeline ----------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "run configured stages end to end");
  std::string pi_config;
  std::vector<std::string> pi_sets;
  pipe_cmd->add_option("--config", pi_config)->required();
  pipe_cmd->add_option("--set", pi_sets, "override config keys, key=value");
  pipe_cmd->callback([&] {
    Config cfg = Config::from_file(pi_config);
    for (const auto& kv : pi_sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("pipeline --set expects key=value, got " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    run_pipeline(cfg);
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const icsel::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
