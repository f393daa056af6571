#include "cli_app.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "fineprint/agentic_generator.hpp"
#include "fineprint/error.hpp"
#include "fineprint/eval_harness.hpp"
#include "fineprint/http_backend.hpp"
#include "fineprint/mock_backend.hpp"
#include "fineprint/vector_index.hpp"
#include "loss_check.hpp"

namespace fineprint::cli {
namespace {

namespace fs = std::filesystem;

// Flags that overlay the config file. Each is applied only when given.
struct ConfigFlags {
  std::string config_path;
  RunConfig values;
  std::string pool_mode;
  std::string scoring_mode;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;

  template <typename T>
  void bind(CLI::App& app, const std::string& name, T RunConfig::*field,
            const std::string& help) {
    CLI::Option* opt = app.add_option(name, values.*field, help);
    overrides.emplace_back(opt, [this, field](RunConfig& c) { c.*field = values.*field; });
  }

  template <typename T>
  CLI::Option* bind_backend(CLI::App& app, const std::string& name, T BackendSettings::*field,
                            const std::string& help) {
    CLI::Option* opt = app.add_option(name, values.backend.*field, help);
    overrides.emplace_back(opt,
                           [this, field](RunConfig& c) { c.backend.*field = values.backend.*field; });
    return opt;
  }

  void add_to(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    bind(app, "--seed", &RunConfig::seed, "random seed");
    bind(app, "--tau", &RunConfig::tau, "contrastive temperature");
    bind(app, "--alpha", &RunConfig::alpha, "hybrid mask threshold width");
    bind(app, "--beta", &RunConfig::beta, "sparse loss weight");
    bind(app, "--n-submasks", &RunConfig::n_submasks, "submask count");
    bind(app, "--threshold", &RunConfig::h, "uncertainty threshold h");
    bind(app, "--k", &RunConfig::k, "retrieval depth and pruner capacity");
    bind(app, "--max-iters", &RunConfig::max_iters, "decoupler iteration limit");
    bind(app, "--parallelism", &RunConfig::parallelism, "concurrent examples");
    CLI::Option* pm =
        app.add_option("--pool-mode", pool_mode, "single or all")->check(CLI::IsMember({"single", "all"}));
    overrides.emplace_back(pm, [this](RunConfig& c) { c.pool_mode = parse_pool_mode(pool_mode); });
    CLI::Option* sm = app.add_option("--scoring-mode", scoring_mode, "cosine or masked")
                          ->check(CLI::IsMember({"cosine", "masked"}));
    overrides.emplace_back(sm,
                           [this](RunConfig& c) { c.scoring_mode = parse_scoring_mode(scoring_mode); });
    CLI::Option* skip = app.add_flag("--skip-on-error", values.skip_on_error,
                                     "report failed examples instead of aborting");
    overrides.emplace_back(skip, [this](RunConfig& c) { c.skip_on_error = values.skip_on_error; });
    CLI::Option* fb = app.add_flag("--fallback-on-probe-failure", values.fallback_on_probe_failure,
                                   "keep the top-k when a sufficiency probe fails");
    overrides.emplace_back(
        fb, [this](RunConfig& c) { c.fallback_on_probe_failure = values.fallback_on_probe_failure; });

    bind_backend(app, "--backend", &BackendSettings::kind, "mock or http")
        ->check(CLI::IsMember({"mock", "http"}));
    bind_backend(app, "--fixtures", &BackendSettings::fixtures, "mock fixture file");
    CLI::Option* lenient = app.add_flag("--lenient", "answer fixture misses with a canned reply");
    overrides.emplace_back(lenient, [](RunConfig& c) { c.backend.strict = false; });
    bind_backend(app, "--base-url", &BackendSettings::base_url, "HTTP endpoint base URL");
    bind_backend(app, "--model", &BackendSettings::model, "chat model name");
    bind_backend(app, "--embedding-model", &BackendSettings::embedding_model,
                 "embedding model name");
    bind_backend(app, "--api-key-env", &BackendSettings::api_key_env,
                 "environment variable holding the API key");
    bind_backend(app, "--replay", &BackendSettings::replay, "HTTP transcript to replay");

    CLI::Option* jf = app.add_option("--judge-fixtures", values.judge.fixtures,
                                     "mock fixture file for the judge");
    overrides.emplace_back(jf, [this](RunConfig& c) {
      if (c.judge.kind.empty()) c.judge = c.backend;
      c.judge.fixtures = values.judge.fixtures;
    });
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(c);
    }
    c.validate();
    return c;
  }
};

std::vector<Pool> load_snapshots(const std::vector<std::string>& paths) {
  std::vector<Pool> pools;
  for (const auto& p : paths) pools.push_back(load_snapshot(p));
  return pools;
}

// The pool a single query searches: the merged pool in all-pool mode, the
// named (or only) snapshot otherwise.
Pool select_pool(std::vector<Pool> pools, PoolMode mode, const std::string& name) {
  if (pools.empty()) throw Error(ErrorCode::invalid_argument, "at least one --snapshot is required");
  if (mode == PoolMode::all) return merge_pools(pools);
  if (name.empty()) {
    if (pools.size() > 1) {
      throw Error(ErrorCode::invalid_argument,
                  "several snapshots given in single-pool mode; choose one with --pool");
    }
    return std::move(pools.front());
  }
  for (auto& p : pools) {
    if (p.name == name) return std::move(p);
  }
  throw Error(ErrorCode::invalid_argument, "no snapshot holds a pool named \"" + name + "\"");
}

std::string read_query(const std::string& query, const std::string& query_file) {
  if (query_file.empty()) {
    if (query.empty()) throw Error(ErrorCode::invalid_argument, "give --query or --query-file");
    return query;
  }
  std::ifstream in(query_file);
  if (!in) throw Error(ErrorCode::io_error, "cannot open query file " + query_file);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string q = ss.str();
  while (!q.empty() && (q.back() == '\n' || q.back() == '\r')) q.pop_back();
  return q;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
}

std::string format_ranked(const RankedResult& r) {
  std::ostringstream out;
  out << std::left << std::setw(6) << "rank" << std::setw(16) << "pool" << std::setw(20)
      << "doc_id" << "score\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    const auto& e = r.entries[i];
    out << std::left << std::setw(6) << i + 1 << std::setw(16) << e.pool_name << std::setw(20)
        << e.doc_id << e.score << "\n";
  }
  return out.str();
}

struct Backends {
  std::unique_ptr<ModelBackend> answer;
  std::unique_ptr<ModelBackend> judge;

  ModelBackend& judge_or_answer() { return judge ? *judge : *answer; }
};

Backends make_backends(const RunConfig& c, bool with_judge) {
  Backends b;
  b.answer = make_backend(c.backend);
  if (with_judge && !c.judge.kind.empty()) b.judge = make_backend(c.judge);
  return b;
}

}  // namespace

std::unique_ptr<ModelBackend> make_backend(const BackendSettings& s) {
  if (s.kind == "mock") {
    if (s.fixtures.empty()) return std::make_unique<MockBackend>(s.strict);
    return std::make_unique<MockBackend>(MockBackend::from_file(s.fixtures, s.strict));
  }
  if (s.kind == "http") {
    HttpBackendConfig hc;
    hc.base_url = s.base_url;
    hc.model = s.model;
    hc.embedding_model = s.embedding_model;
    hc.api_key_env = s.api_key_env;
    hc.timeout_s = s.timeout_s;
    hc.retries = s.retries;
    if (!s.replay.empty()) {
      const char* key = std::getenv(s.api_key_env.c_str());
      hc.retry_backoff = std::chrono::milliseconds(0);
      return std::make_unique<HttpBackend>(hc, ReplayTransport::from_file(s.replay),
                                           key != nullptr ? key : "");
    }
    std::string key = api_key_from_env(s.api_key_env);
    auto transport = std::make_unique<HttplibTransport>(
        s.base_url, std::chrono::milliseconds(static_cast<long>(s.timeout_s * 1000.0)));
    return std::make_unique<HttpBackend>(hc, std::move(transport), std::move(key));
  }
  throw Error(ErrorCode::invalid_argument, "unknown backend kind \"" + s.kind + "\"");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-embedding retrieval and uncertainty-routed document QA"};
  app.name("fineprint");
  app.require_subcommand(1);

  // ingest
  CLI::App* ingest = app.add_subcommand("ingest", "build a pool snapshot from a corpus file");
  std::string corpus, snapshot_out;
  bool force = false;
  ingest->add_option("corpus", corpus, "JSON-lines corpus")->required();
  ingest->add_option("-o,--out", snapshot_out, "snapshot path")->required();
  ingest->add_flag("--force", force, "overwrite an existing snapshot");

  // retrieve
  CLI::App* retrieve = app.add_subcommand("retrieve", "rank documents for one query");
  std::vector<std::string> snapshots;
  std::string query, query_file, pool_name;
  bool as_json = false;
  ConfigFlags retrieve_flags;
  retrieve->add_option("--snapshot", snapshots, "pool snapshot (repeatable)")->required();
  retrieve->add_option("--query", query, "query text");
  retrieve->add_option("--query-file", query_file, "file holding the query text");
  retrieve->add_option("--pool", pool_name, "pool to search in single-pool mode");
  retrieve->add_flag("--json", as_json, "emit JSON");
  retrieve_flags.add_to(*retrieve);

  // answer
  CLI::App* answer = app.add_subcommand("answer", "run the full answer pipeline for one query");
  std::string trace_path;
  ConfigFlags answer_flags;
  answer->add_option("--snapshot", snapshots, "pool snapshot (repeatable)")->required();
  answer->add_option("--query", query, "query text");
  answer->add_option("--query-file", query_file, "file holding the query text");
  answer->add_option("--pool", pool_name, "pool to search in single-pool mode");
  answer->add_option("--trace", trace_path, "write the AnswerTrace JSON here");
  answer->add_flag("--json", as_json, "print the trace instead of the answer");
  answer_flags.add_to(*answer);

  // eval
  CLI::App* eval = app.add_subcommand("eval", "evaluate retrieval or end-to-end accuracy");
  std::string dataset, mode = "retrieval", report_path, traces_path;
  ConfigFlags eval_flags;
  eval->add_option("--dataset", dataset, "JSON-lines dataset")->required();
  eval->add_option("--snapshot", snapshots, "pool snapshot (repeatable)")->required();
  eval->add_option("--mode", mode, "retrieval or e2e")->check(CLI::IsMember({"retrieval", "e2e"}));
  eval->add_option("--report", report_path, "write the EvalReport JSON here");
  eval->add_option("--traces", traces_path, "write e2e traces (JSON lines) here");
  eval->add_flag("--json", as_json, "print the report JSON instead of the table");
  eval_flags.add_to(*eval);

  // loss-check
  CLI::App* loss = app.add_subcommand("loss-check", "self-check the losses and their gradients");
  check::LossCheckOptions loss_opts;
  std::string sizes;
  loss->add_option("--seed", loss_opts.seed, "random seed");
  loss->add_option("--sizes", sizes, "e.g. \"B=1\" or \"B=2,4;d=8\"");
  loss->add_option("--batches", loss_opts.gradient_batches, "gradient-check batches")
      ->check(CLI::NonNegativeNumber);
  loss->add_option("--oracle-batches", loss_opts.oracle_batches, "oracle-comparison batches")
      ->check(CLI::NonNegativeNumber);
  loss->add_flag("--inject-gradient-bug", loss_opts.inject_gradient_bug,
                 "check a deliberately wrong gradient");
  loss->add_flag("--json", as_json, "emit JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) {
      if (fs::exists(snapshot_out) && !force) {
        err << "error: " << snapshot_out << " exists; pass --force to overwrite\n";
        return 1;
      }
      std::vector<std::string> warnings;
      const Pool pool = ingest_corpus(corpus, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      save_snapshot(pool, snapshot_out);
      out << pool.size() << " records, dim=" << pool.dimension << "\n";
      return 0;
    }

    if (retrieve->parsed()) {
      const RunConfig config = retrieve_flags.resolve();
      const std::string q = read_query(query, query_file);
      const Pool pool = select_pool(load_snapshots(snapshots), config.pool_mode, pool_name);
      auto backend = make_backend(config.backend);
      ScoringOptions scoring;
      scoring.mode = config.scoring_mode;
      scoring.alpha = config.alpha;
      const RankedResult r = top_k(pool, backend->embed_query(q), static_cast<std::size_t>(config.k), scoring);
      if (as_json) {
        nlohmann::ordered_json j;
        j["query"] = q;
        j["pool"] = pool.name;
        j["result"] = to_json(r);
        j["config"] = to_json(config);
        out << j.dump(2) << "\n";
      } else {
        out << format_ranked(r);
      }
      return 0;
    }

    if (answer->parsed()) {
      const RunConfig config = answer_flags.resolve();
      const std::string q = read_query(query, query_file);
      const Pool pool = select_pool(load_snapshots(snapshots), config.pool_mode, pool_name);
      auto backend = make_backend(config.backend);
      const AnswerTrace trace = run_pipeline(q, pool, config, *backend);
      const std::string trace_text = to_json(trace).dump(2) + "\n";
      if (!trace_path.empty()) write_file(trace_path, trace_text);
      if (!trace.ok()) {
        err << "error: " << trace.error_message << "\n";
        const bool backend_error = Error(*trace.error_code, "").is_backend_error();
        return backend_error ? 2 : 1;
      }
      if (as_json) {
        out << trace_text;
      } else {
        out << *trace.final_answer << "\n";
      }
      return 0;
    }

    if (eval->parsed()) {
      RunConfig config = eval_flags.resolve();
      const std::vector<QaExample> examples = load_dataset(dataset);
      const std::vector<Pool> pools = load_snapshots(snapshots);
      EvalReport report;
      std::vector<AnswerTrace> traces;
      if (mode == "retrieval") {
        auto backend = make_backend(config.backend);
        report = evaluate_retrieval(examples, config.pool_mode, pools, *backend, config);
      } else {
        Backends b = make_backends(config, true);
        report = evaluate_e2e(examples, pools, config, *b.answer, b.judge_or_answer(),
                              traces_path.empty() ? nullptr : &traces);
      }
      if (!report_path.empty()) write_file(report_path, to_json(report).dump(2) + "\n");
      if (!traces_path.empty()) {
        std::string lines;
        for (const auto& t : traces) lines += to_json(t).dump() + "\n";
        write_file(traces_path, lines);
      }
      if (as_json) {
        out << to_json(report).dump(2) << "\n";
      } else {
        out << format_table(report);
      }
      return 0;
    }

    if (loss->parsed()) {
      if (!sizes.empty()) check::apply_sizes(loss_opts, sizes);
      const check::LossCheckResult r = check::run_loss_check(loss_opts);
      if (as_json) {
        out << to_json(r, loss_opts).dump(2) << "\n";
      } else {
        out << std::scientific << std::setprecision(3);
        out << "oracle:   " << r.oracle_batches << " batches, max abs error "
            << r.oracle_max_abs_error << (r.oracle_ok ? "  ok" : "  FAIL") << "\n";
        out << "gradient: " << r.gradient_batches << " batches, max rel error "
            << r.gradient_max_rel_error << " (max abs " << r.gradient_max_abs_error << ")"
            << (r.gradient_ok ? "  ok" : "  FAIL") << "\n";
      }
      return r.ok() ? 0 : 1;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_backend_error() ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace fineprint::cli
