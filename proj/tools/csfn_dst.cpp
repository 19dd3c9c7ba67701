// Command-line front end: data generation, training, evaluation, gradient
// checks, prediction traces and the layer-count grid search.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "csfn/checkpoint.hpp"
#include "csfn/log.hpp"
#include "csfn/pipeline.hpp"

namespace {

using namespace csfn;

struct Options {
  std::string schema;
  std::string corpus;
  std::string ckpt;
  std::string out;
  std::string config;
  std::string split = "test";
  std::string oracle = "none";
  std::string ablation;
  std::string trace;
  std::string log;
  std::uint64_t seed = 1;
  std::size_t n = 200;
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double lr = 1e-4;
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t layers = 0;
  std::size_t max_decode_len = 0;
  std::size_t workers = 1;
  std::size_t samples = 200;
  std::size_t patience = 5;
  std::vector<std::size_t> layer_grid = {4, 5, 6, 7, 8};
  bool strict_paper = false;
  bool quiet = false;
};

// CSFN_OUT_DIR redirects relative output paths.
std::filesystem::path output_path(const std::string& p) {
  const char* dir = std::getenv("CSFN_OUT_DIR");
  std::filesystem::path path(p);
  if (dir && *dir && path.is_relative()) return std::filesystem::path(dir) / path;
  return path;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const auto target = output_path(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(target);
  if (!out) throw ContractError("cannot write " + target.string());
  out << text;
}

SchemaDef load_schema(const Options& o) {
  if (o.schema.empty()) return default_toy_schema();
  return SchemaDef::load(o.schema);
}

Corpus load_any_corpus(const std::string& path, const SchemaDef& schema) {
  if (path.empty()) throw ContractError("--corpus is required");
  if (std::filesystem::is_directory(path)) {
    IngestStats stats;
    Corpus c = load_multiwoz(path, schema, &stats);
    log_info("ingested " + stats.to_json().dump());
    return c;
  }
  Corpus c = load_corpus(path);
  c.validate(SchemaGraph(schema));
  return c;
}

TrainConfig train_config(const Options& o, const CLI::App& cmd) {
  TrainConfig c;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ContractError("cannot open config " + o.config);
    c = TrainConfig::from_json(nlohmann::json::parse(in));
  }
  auto given = [&](const char* flag) { return cmd.count(flag) > 0; };
  if (given("--seed")) c.seed = o.seed;
  if (given("--epochs")) c.epochs = o.epochs;
  if (given("--batch")) c.batch = o.batch;
  if (given("--lr")) c.lr = o.lr;
  if (given("--patience")) c.patience = o.patience;
  if (given("--d-model")) c.model.d_model = o.d_model;
  if (given("--heads")) c.model.heads = o.heads;
  if (given("--layers")) c.model.layers = o.layers;
  if (given("--max-decode-len")) c.model.max_decode_len = o.max_decode_len;
  if (given("--ablation")) c.ablation = parse_ablation(o.ablation);
  if (given("--strict-paper")) c.strict_paper = o.strict_paper;
  c.model.strict_paper = c.model.strict_paper || c.strict_paper;
  c.validate();
  return c;
}

int cmd_gen_data(const Options& o) {
  if (o.out.empty()) throw ContractError("--out is required");
  Corpus c = generate_toy_corpus(load_schema(o), o.n, o.seed);
  const auto path = output_path(o.out);
  save_corpus(c, path);
  log_info("wrote " + std::to_string(c.size()) + " dialogues to " + path.string());
  return 0;
}

int cmd_train(const Options& o, const CLI::App& cmd) {
  if (o.out.empty()) throw ContractError("--out (checkpoint path) is required");
  const SchemaDef schema = load_schema(o);
  const Corpus corpus = load_any_corpus(o.corpus, schema);
  const TrainConfig cfg = train_config(o, cmd);
  auto model = make_model(corpus, schema, cfg);
  log_info("model has " + std::to_string(model->parameter_count()) + " parameters");

  const auto ckpt = output_path(o.out);
  if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
  const auto log_path = o.log.empty() ? std::filesystem::path(ckpt.string() + ".log.jsonl") : output_path(o.log);
  std::ofstream log_out(log_path);
  if (!log_out) throw ContractError("cannot write " + log_path.string());
  TrainResult r = train(*model, corpus, cfg, &log_out);
  model->save(ckpt);
  log_info("trained " + std::to_string(r.epochs_run) + " epochs (best epoch " + std::to_string(r.best_epoch) +
           "); checkpoint " + ckpt.string());
  return 0;
}

std::unique_ptr<CsfnModel> load_model(const Options& o, const CLI::App& cmd) {
  if (o.ckpt.empty()) throw ContractError("--ckpt is required");
  auto model = CsfnModel::load(o.ckpt);
  if (cmd.count("--ablation")) model->set_ablation(parse_ablation(o.ablation));
  if (cmd.count("--max-decode-len")) model->set_max_decode_len(o.max_decode_len);
  return model;
}

int cmd_eval(const Options& o, const CLI::App& cmd) {
  auto model = load_model(o, cmd);
  const Corpus corpus = load_any_corpus(o.corpus, model->graph().def());
  const auto& dialogues = corpus.split(parse_split(o.split));
  std::ostringstream trace;
  EvalReport report = evaluate(*model, dialogues, parse_oracle(o.oracle), o.workers, o.trace.empty() ? nullptr : &trace);
  if (!o.trace.empty()) write_text(o.trace, trace.str());
  nlohmann::json j = report.to_json();
  j["split"] = o.split;
  write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_trace(const Options& o, const CLI::App& cmd) {
  auto model = load_model(o, cmd);
  const Corpus corpus = load_any_corpus(o.corpus, model->graph().def());
  auto pred = infer_dialogues(*model, corpus.split(parse_split(o.split)), parse_oracle(o.oracle), o.workers);
  std::ostringstream out;
  write_trace(out, pred, model->graph());
  write_text(o.out, out.str());
  return 0;
}

int cmd_grad_check(const Options& o) {
  GradProbe probe = make_grad_probe(o.seed);
  GradCheckOptions opts;
  opts.samples = o.samples;
  opts.per_parameter = 1;
  opts.seed = o.seed;
  GradCheckReport r = check_model_gradients(probe, opts);
  nlohmann::json j = {{"checked", r.checked},
                      {"max_rel_error", r.max_rel_error},
                      {"tolerance", opts.tol},
                      {"passed", r.passed},
                      {"worst", {{"param", r.worst.param},
                                 {"index", r.worst.index},
                                 {"analytic", r.worst.analytic},
                                 {"numeric", r.worst.numeric}}}};
  write_text(o.out, j.dump(2) + "\n");
  return r.passed ? 0 : 1;
}

int cmd_grid_search(const Options& o, const CLI::App& cmd) {
  const SchemaDef schema = load_schema(o);
  const Corpus corpus = load_any_corpus(o.corpus, schema);
  GridResult r = grid_search(corpus, schema, train_config(o, cmd), o.layer_grid);
  write_text(o.out, r.to_json().dump(2) + "\n");
  return 0;
}

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--d-model", o.d_model, "Hidden size d");
  cmd->add_option("--heads", o.heads, "Attention heads");
  cmd->add_option("--layers", o.layers, "Fusion layers L");
}

void add_train_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--schema", o.schema, "Schema JSON (default: built-in toy schema)");
  cmd->add_option("--corpus", o.corpus, "Corpus JSON or directory of *_dials.json files")->required();
  cmd->add_option("--config", o.config, "JSON training config; flags override it");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--epochs", o.epochs, "Maximum epochs");
  cmd->add_option("--batch", o.batch, "Turns per optimizer step");
  cmd->add_option("--lr", o.lr, "ADAM learning rate");
  cmd->add_option("--patience", o.patience, "Early-stopping patience in epochs (0 disables)");
  add_model_flags(cmd, o);
  cmd->add_option("--ablation", o.ablation, "Graph mask: schema, ones or identity")
      ->check(CLI::IsMember({"schema", "ones", "identity", "full_ones"}));
  cmd->add_option("--max-decode-len", o.max_decode_len, "Longest decoded value");
  cmd->add_flag("--strict-paper", o.strict_paper, "No dropout, clipping or early stopping");
}

void add_eval_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--ckpt", o.ckpt, "Checkpoint path")->required();
  cmd->add_option("--corpus", o.corpus, "Corpus JSON or directory of *_dials.json files")->required();
  cmd->add_option("--split", o.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "dev", "test"}));
  cmd->add_option("--oracle", o.oracle, "Gold substitution: none, prev_state, gate or value")
      ->check(CLI::IsMember({"none", "prev_state", "gate", "value"}));
  cmd->add_option("--ablation", o.ablation, "Override the checkpoint's graph mask")
      ->check(CLI::IsMember({"schema", "ones", "identity", "full_ones"}));
  cmd->add_option("--max-decode-len", o.max_decode_len, "Longest decoded value");
  cmd->add_option("--workers", o.workers, "Decoding threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Schema-graph dialogue state tracker"};
  app.require_subcommand(1);
  app.add_flag("--quiet", o.quiet, "Only print warnings and errors");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic toy corpus");
  gen->add_option("--schema", o.schema, "Schema JSON (default: built-in toy schema)");
  gen->add_option("--seed", o.seed, "Random seed");
  gen->add_option("--n", o.n, "Number of dialogues");
  gen->add_option("--out", o.out, "Output corpus JSON")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_train_flags(train_cmd, o);
  train_cmd->add_option("--out", o.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", o.log, "Training log (default: <out>.log.jsonl)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print a report");
  add_eval_flags(eval_cmd, o);
  eval_cmd->add_option("--out", o.out, "Report JSON (default: stdout)");
  eval_cmd->add_option("--trace", o.trace, "Also write the prediction trace here");

  auto* trace_cmd = app.add_subcommand("trace", "Write per-turn predictions as JSON lines");
  add_eval_flags(trace_cmd, o);
  trace_cmd->add_option("--out", o.out, "Trace file (default: stdout)");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of all model gradients");
  grad->add_option("--seed", o.seed, "Random seed");
  grad->add_option("--samples", o.samples, "Coordinates to check");
  grad->add_option("--out", o.out, "Report JSON (default: stdout)");

  auto* grid = app.add_subcommand("grid-search", "Select the layer count on the validation split");
  add_train_flags(grid, o);
  grid->add_option("--grid", o.layer_grid, "Layer counts to try")->delimiter(',');
  grid->add_option("--out", o.out, "Result JSON (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    // Top-level help lists the flags of every subcommand.
    if (app.get_subcommands().empty()) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    }
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (o.quiet) set_log_level(LogLevel::kWarn);

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train_cmd) return cmd_train(o, *train_cmd);
    if (*eval_cmd) return cmd_eval(o, *eval_cmd);
    if (*trace_cmd) return cmd_trace(o, *trace_cmd);
    if (*grad) return cmd_grad_check(o);
    if (*grid) return cmd_grid_search(o, *grid);
  } catch (const TrainingError& e) {
    log_error(std::string("training aborted: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log_error(e.what());
    return 1;
  }
  return 1;
}
