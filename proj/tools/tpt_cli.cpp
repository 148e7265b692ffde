// Command-line surface of the toolkit. Machine-readable JSON reports go
// to stdout, human logs to stderr. Exit codes: 0 success, 2 config
// error, 3 data error, 4 checkpoint error, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpt/checkpoint.hpp"
#include "tpt/config.hpp"
#include "tpt/corpus.hpp"
#include "tpt/decoding.hpp"
#include "tpt/diagnostics.hpp"
#include "tpt/model.hpp"
#include "tpt/probing.hpp"
#include "tpt/rouge.hpp"
#include "tpt/synthetic.hpp"
#include "tpt/trainer.hpp"
#include "tpt/vocab.hpp"

namespace {

using nlohmann::json;

void log_line(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

void emit(const json& report) { std::fprintf(stdout, "%s\n", report.dump().c_str()); }

struct CommonOpts {
  std::string config_path;
  std::string variant;
  int layers = -1;
  int heads = -1;
  int dmodel = -1;
  int dk = -1;
  int dff = -1;
  int nroles = -1;
  int drole = -1;
  int max_positions = -1;
  double dropout = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_model_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file ({\"model\":..., \"train\":...})");
  cmd->add_option("--variant", o.variant, "baseline | tpt-c | tpt-d");
  cmd->add_option("--layers", o.layers, "layers per stack");
  cmd->add_option("--heads", o.heads, "attention heads");
  cmd->add_option("--dmodel", o.dmodel, "model width");
  cmd->add_option("--dk", o.dk, "per-head key width (derived from dmodel/heads if omitted)");
  cmd->add_option("--dff", o.dff, "feed-forward width");
  cmd->add_option("--nroles", o.nroles, "role dictionary size");
  cmd->add_option("--drole", o.drole, "per-head role width (derived if omitted)");
  cmd->add_option("--max-positions", o.max_positions, "positional encoding table size");
  cmd->add_option("--dropout", o.dropout, "dropout rate");
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw tpt::ConfigError("cannot open config file: " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw tpt::ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
}

tpt::ModelConfig resolve_model_config(const CommonOpts& o, const json& file_cfg,
                                      int vocab_size) {
  tpt::ModelConfig cfg;  // paper-scale defaults
  bool dk_given = false, drole_given = false;
  if (file_cfg.contains("model")) {
    const auto& m = file_cfg["model"];
    cfg = tpt::model_config_from_json(m);
    dk_given = m.contains("d_k");
    drole_given = m.contains("d_role");
  }
  if (!o.variant.empty()) cfg.variant = tpt::variant_from_string(o.variant);
  if (o.layers > 0) cfg.layers = o.layers;
  if (o.heads > 0) cfg.heads = o.heads;
  if (o.dmodel > 0) cfg.d_model = o.dmodel;
  if (o.dk > 0) {
    cfg.d_k = o.dk;
    dk_given = true;
  }
  if (o.dff > 0) cfg.d_ff = o.dff;
  if (o.nroles > 0) cfg.n_roles = o.nroles;
  if (o.drole > 0) {
    cfg.d_role = o.drole;
    drole_given = true;
  }
  if (o.max_positions > 0) cfg.max_positions = o.max_positions;
  if (o.dropout >= 0.0) cfg.dropout = o.dropout;
  // widths follow dmodel/heads unless pinned explicitly
  if (!dk_given && cfg.d_model % cfg.heads == 0) cfg.d_k = cfg.d_model / cfg.heads;
  if (!drole_given && cfg.d_model % cfg.heads == 0) cfg.d_role = cfg.d_model / cfg.heads;
  if (vocab_size > 0) cfg.vocab_size = vocab_size;
  cfg.validate();
  return cfg;
}

tpt::TrainConfig resolve_train_config(const json& file_cfg, const CommonOpts& o) {
  tpt::TrainConfig tc;
  if (file_cfg.contains("train")) tc = tpt::train_config_from_json(file_cfg["train"]);
  if (o.seed_set) tc.seed = o.seed;
  tc.validate();
  return tc;
}

json hypothesis_json(const tpt::Hypothesis& hyp, const tpt::Vocabulary& vocab) {
  return {{"summary", tpt::decode_ids(hyp.ids, vocab)},
          {"logprob", hyp.logprob},
          {"score", hyp.score},
          {"finished", hyp.finished}};
}

// ---- subcommand bodies ----

int run_build_vocab(const std::string& corpus_path, const std::string& output, int size) {
  auto corpus = tpt::load_corpus(corpus_path);
  auto vocab = tpt::Vocabulary::build(tpt::count_tokens(corpus), size);
  vocab.save(output);
  log_line("vocabulary of " + std::to_string(vocab.size()) + " ids written to " + output);
  emit({{"command", "build-vocab"},
        {"examples", corpus.size()},
        {"vocab_size", vocab.size()},
        {"output", output}});
  return 0;
}

int run_train(const CommonOpts& o, const std::string& corpus_path,
              const std::string& vocab_path, const std::string& output,
              const std::string& resume, int steps_override, int log_every) {
  const auto file_cfg = load_config_file(o.config_path);
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto corpus = tpt::load_corpus(corpus_path);

  std::unique_ptr<tpt::Model> model;
  tpt::TrainConfig tc;
  std::unique_ptr<tpt::Trainer<float>> trainer;
  std::uint64_t start_step = 0;
  if (!resume.empty()) {
    auto ck = tpt::load_checkpoint<float>(resume);
    model = std::move(ck.model);
    tc = ck.train_cfg;
    trainer = std::make_unique<tpt::Trainer<float>>(*model, tc);
    tpt::restore_trainer(*trainer, ck);
    start_step = ck.step;
    log_line("resumed from " + resume + " at step " + std::to_string(ck.step));
  } else {
    auto mc = resolve_model_config(o, file_cfg, vocab.size());
    tc = resolve_train_config(file_cfg, o);
    tpt::Rng init_rng(tc.seed);
    model = std::make_unique<tpt::Model>(mc, init_rng);
    trainer = std::make_unique<tpt::Trainer<float>>(*model, tc);
  }
  const int max_steps = steps_override >= 0 ? steps_override : tc.max_steps;
  auto pool = tpt::encode_corpus(corpus, vocab, tc.max_source_len, tc.max_target_len);

  double last_loss = 0.0;
  std::vector<double> tail;
  for (int s = 0; s < max_steps; ++s) {
    last_loss = trainer->train_step(trainer->sample_batch(pool));
    tail.push_back(last_loss);
    if (tail.size() > 10) tail.erase(tail.begin());
    const auto step = trainer->step();
    if (log_every > 0 && step % static_cast<std::uint64_t>(log_every) == 0)
      log_line("step " + std::to_string(step) + " loss " + std::to_string(last_loss));
    if (step % static_cast<std::uint64_t>(tc.checkpoint_every) == 0)
      tpt::save_checkpoint<float>(output, *model, tc, &trainer->optimizer(), trainer->rng(),
                                  step);
  }
  tpt::save_checkpoint<float>(output, *model, tc, &trainer->optimizer(), trainer->rng(),
                              trainer->step());
  log_line("checkpoint written to " + output);
  emit({{"command", "train"},
        {"steps_run", max_steps},
        {"start_step", start_step},
        {"final_step", trainer->step()},
        {"final_loss", max_steps > 0 ? json(last_loss) : json(nullptr)},
        {"loss_tail", tail},
        {"checkpoint", output},
        {"examples", pool.size()}});
  return 0;
}

struct GenerateOpts {
  int beam = 1;
  double alpha = 1.0;
  int max_len = 64;
};

int run_generate(const std::string& ckpt_path, const std::string& corpus_path,
                 const std::string& vocab_path, const GenerateOpts& g) {
  auto ck = tpt::load_checkpoint<float>(ckpt_path);
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto corpus = tpt::load_corpus(corpus_path);
  json outputs = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto src = tpt::encode_text(corpus[i].document, vocab, ck.train_cfg.max_source_len);
    const auto hyp = g.beam == 1 ? tpt::greedy_decode(*ck.model, src, g.max_len)
                                 : tpt::beam_search(*ck.model, src, g.beam, g.max_len, g.alpha);
    auto j = hypothesis_json(hyp, vocab);
    j["index"] = i;
    outputs.push_back(std::move(j));
  }
  emit({{"command", "generate"},
        {"beam", g.beam},
        {"alpha", g.alpha},
        {"max_len", g.max_len},
        {"generations", outputs}});
  return 0;
}

int run_evaluate(const std::string& ckpt_path, const std::string& corpus_path,
                 const std::string& vocab_path, const GenerateOpts& g) {
  auto ck = tpt::load_checkpoint<float>(ckpt_path);
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto corpus = tpt::load_corpus(corpus_path);
  std::vector<std::string> candidates, references;
  for (const auto& ex : corpus) {
    auto src = tpt::encode_text(ex.document, vocab, ck.train_cfg.max_source_len);
    const auto hyp = g.beam == 1 ? tpt::greedy_decode(*ck.model, src, g.max_len)
                                 : tpt::beam_search(*ck.model, src, g.beam, g.max_len, g.alpha);
    candidates.push_back(tpt::decode_ids(hyp.ids, vocab));
    references.push_back(ex.summary);
  }
  auto report = tpt::score_corpus(candidates, references);
  std::fprintf(stderr, "%s", tpt::format_table(report).c_str());
  json j = tpt::to_json(report);
  j["command"] = "evaluate";
  j["beam"] = g.beam;
  j["alpha"] = g.alpha;
  j["max_len"] = g.max_len;
  emit(j);
  return 0;
}

int run_count_params(const CommonOpts& o) {
  const auto file_cfg = load_config_file(o.config_path);
  // deltas are against the same dimensions with the variant swapped
  auto base_cfg = resolve_model_config(o, file_cfg, -1);
  json per_variant = json::object();
  long long totals[3] = {0, 0, 0};
  const tpt::Variant variants[3] = {tpt::Variant::kBaseline, tpt::Variant::kTptC,
                                    tpt::Variant::kTptD};
  for (int i = 0; i < 3; ++i) {
    auto cfg = base_cfg;
    cfg.variant = variants[i];
    const auto pc = tpt::count_parameters(cfg);
    totals[i] = pc.total;
    json groups = json::object();
    for (const auto& [g, n] : pc.groups) groups[g] = n;
    per_variant[to_string(variants[i])] = {{"total", pc.total}, {"groups", groups}};
  }
  emit({{"command", "count-params"},
        {"config", tpt::to_json(base_cfg)},
        {"variants", per_variant},
        {"delta_tpt_d_minus_baseline", totals[2] - totals[0]},
        {"delta_tpt_c_minus_baseline", totals[1] - totals[0]}});
  return 0;
}

int run_grad_check(const CommonOpts& o) {
  // small 64-bit config; flags can override dimensions
  CommonOpts defaults = o;
  if (defaults.layers <= 0) defaults.layers = 2;
  if (defaults.heads <= 0) defaults.heads = 2;
  if (defaults.dmodel <= 0) defaults.dmodel = 16;
  if (defaults.dff <= 0) defaults.dff = 32;
  if (defaults.nroles <= 0) defaults.nroles = 5;
  if (defaults.max_positions <= 0) defaults.max_positions = 16;
  if (defaults.dropout < 0) defaults.dropout = 0.0;
  const auto file_cfg = load_config_file(o.config_path);
  auto cfg = resolve_model_config(defaults, file_cfg, 13);
  json results = json::object();
  double worst = 0.0;
  std::vector<tpt::Variant> variants;
  if (o.variant.empty()) {
    variants = {tpt::Variant::kBaseline, tpt::Variant::kTptC, tpt::Variant::kTptD};
  } else {
    variants = {tpt::variant_from_string(o.variant)};
  }
  for (auto v : variants) {
    auto vcfg = cfg;
    vcfg.variant = v;
    tpt::Rng rng(o.seed_set ? o.seed : 7);
    tpt::ModelT<double> model(vcfg, rng);
    for (auto& [name, t] : model.parameters().items())
      for (auto& val : t.data()) val += (rng.uniform() - 0.5) * 0.6;
    auto rep = tpt::model_grad_check<double>(model, {4, 9, 6, 1}, {3, 5, 7}, {5, 7, 1}, 1e-4);
    log_line(to_string(v) + ": max rel error " + std::to_string(rep.max_error) + " over " +
             std::to_string(rep.coordinates) + " coords (worst: " + rep.worst_parameter + ")");
    results[to_string(v)] = {{"max_error", rep.max_error},
                             {"coordinates", rep.coordinates},
                             {"worst_parameter", rep.worst_parameter}};
    worst = std::max(worst, rep.max_error);
  }
  emit({{"command", "grad-check"},
        {"results", results},
        {"max_error", worst},
        {"pass", worst < 1e-4}});
  return worst < 1e-4 ? 0 : 1;
}

int run_probe_extract(const std::string& ckpt_path, const std::string& data_path,
                      const std::string& vocab_path, const std::string& output, int layer,
                      const std::string& site, const std::string& binding) {
  auto ck = tpt::load_checkpoint<float>(ckpt_path);
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto data = tpt::load_probe_data(data_path, vocab, ck.train_cfg.max_source_len,
                                   ck.train_cfg.max_target_len);
  auto records = tpt::extract_representations(
      *ck.model, data, layer, tpt::rep_site_from_string(site),
      binding == "self" ? tpt::BindingSite::kDecoderSelf : tpt::BindingSite::kDecoderCross);
  tpt::save_representation_dump(output, records);
  log_line(std::to_string(records.size()) + " records written to " + output);
  emit({{"command", "probe-extract"},
        {"records", records.size()},
        {"layer", layer},
        {"site", site},
        {"binding", binding},
        {"output", output}});
  return 0;
}

int run_probe_train(const std::string& data_path, const std::string& vocab_path,
                    const std::string& dump_path, int layer, const std::string& site,
                    const std::string& head, int epochs, std::uint64_t seed, int max_src,
                    int max_tgt) {
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto data = tpt::load_probe_data(data_path, vocab, max_src, max_tgt);
  auto dump = tpt::load_representation_dump<float>(dump_path);
  auto records = tpt::records_from_dump(data, dump, layer, tpt::rep_site_from_string(site));
  tpt::ProbeTrainOptions opt;
  opt.linear_head = head == "linear";
  opt.epochs = epochs;
  opt.seed = seed;
  auto [result, trained] = tpt::train_probe(records, opt);
  log_line("probe dev F1 " + std::to_string(result.dev_f1) + " over " +
           std::to_string(result.n_labels) + " classes");
  emit({{"command", "probe-train"},
        {"dev_f1", result.dev_f1},
        {"classes", result.n_labels},
        {"train_records", result.train_records},
        {"dev_records", result.dev_records},
        {"labels", result.label_inventory},
        {"head", head}});
  return 0;
}

int run_analyze_roles(const std::string& ckpt_path, const std::string& corpus_path,
                      const std::string& vocab_path, int layer, const std::string& site,
                      double threshold) {
  auto ck = tpt::load_checkpoint<float>(ckpt_path);
  auto vocab = tpt::Vocabulary::load(vocab_path);
  auto corpus = tpt::load_corpus(corpus_path);
  auto pool = tpt::encode_corpus(corpus, vocab, ck.train_cfg.max_source_len,
                                 ck.train_cfg.max_target_len);
  auto report = tpt::role_discreteness(*ck.model, pool, layer,
                                       tpt::binding_site_from_string(site), threshold);
  json j = tpt::to_json(report);
  j["command"] = "analyze-roles";
  j["layer"] = layer;
  j["site"] = site;
  emit(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TP-Transformer summarization toolkit"};
  app.require_subcommand(1);

  CommonOpts common;

  // build-vocab
  auto* sc_vocab = app.add_subcommand("build-vocab", "build a word-level vocabulary");
  std::string bv_corpus, bv_output = "vocab.txt";
  int bv_size = 8000;
  sc_vocab->add_option("--corpus", bv_corpus, "JSONL corpus")->required();
  sc_vocab->add_option("--output", bv_output, "vocabulary file to write");
  sc_vocab->add_option("--size", bv_size, "vocabulary size including 4 reserved ids");

  // train
  auto* sc_train = app.add_subcommand("train", "train a model");
  std::string tr_corpus, tr_vocab, tr_output = "model.tpts", tr_resume;
  int tr_steps = -1, tr_log_every = 100;
  add_model_flags(sc_train, common);
  sc_train->add_option("--corpus", tr_corpus, "JSONL corpus")->required();
  sc_train->add_option("--vocab", tr_vocab, "vocabulary file")->required();
  sc_train->add_option("--output", tr_output, "checkpoint path");
  sc_train->add_option("--resume", tr_resume, "checkpoint to resume from");
  sc_train->add_option("--steps", tr_steps, "steps to run (overrides train.max_steps)");
  sc_train->add_option("--log-every", tr_log_every, "stderr log cadence");
  auto* tr_seed = sc_train->add_option("--seed", common.seed, "training seed");

  // generate / evaluate share decoding flags
  GenerateOpts gen;
  std::string ge_ckpt, ge_corpus, ge_vocab;
  auto add_decode_flags = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", ge_ckpt, "model checkpoint")->required();
    cmd->add_option("--corpus", ge_corpus, "JSONL corpus")->required();
    cmd->add_option("--vocab", ge_vocab, "vocabulary file")->required();
    cmd->add_option("--beam", gen.beam, "beam width (1 = greedy)");
    cmd->add_option("--alpha", gen.alpha, "length-normalization exponent");
    cmd->add_option("--max-len", gen.max_len, "maximum generated tokens");
  };
  auto* sc_generate = app.add_subcommand("generate", "decode summaries");
  add_decode_flags(sc_generate);
  auto* sc_evaluate = app.add_subcommand("evaluate", "decode and score with ROUGE");
  add_decode_flags(sc_evaluate);

  // count-params
  auto* sc_count = app.add_subcommand("count-params", "count learnable parameters per variant");
  add_model_flags(sc_count, common);

  // grad-check
  auto* sc_grad = app.add_subcommand("grad-check", "64-bit central-difference gradient check");
  add_model_flags(sc_grad, common);
  auto* gc_seed = sc_grad->add_option("--seed", common.seed, "model seed");

  // probe-extract
  auto* sc_pex = app.add_subcommand("probe-extract", "extract decoder representations");
  std::string px_ckpt, px_data, px_vocab, px_output = "reps.bin", px_site = "final",
              px_binding = "cross";
  int px_layer = 1;
  sc_pex->add_option("--checkpoint", px_ckpt, "model checkpoint")->required();
  sc_pex->add_option("--data", px_data, "probe JSONL")->required();
  sc_pex->add_option("--vocab", px_vocab, "vocabulary file")->required();
  sc_pex->add_option("--output", px_output, "representation dump to write");
  sc_pex->add_option("--layer", px_layer, "decoder layer, 1-based");
  sc_pex->add_option("--site", px_site, "role | filler | tpr | final");
  sc_pex->add_option("--binding", px_binding, "cross | self (which decoder binding)");

  // probe-train
  auto* sc_ptr = app.add_subcommand("probe-train", "train a probe on extracted representations");
  std::string pt_data, pt_vocab, pt_dump, pt_site = "final", pt_head = "mlp";
  int pt_layer = 1, pt_epochs = 10, pt_max_src = 256, pt_max_tgt = 64;
  std::uint64_t pt_seed = 1;
  sc_ptr->add_option("--data", pt_data, "probe JSONL")->required();
  sc_ptr->add_option("--vocab", pt_vocab, "vocabulary file")->required();
  sc_ptr->add_option("--dump", pt_dump, "representation dump from probe-extract")->required();
  sc_ptr->add_option("--layer", pt_layer, "decoder layer, 1-based");
  sc_ptr->add_option("--site", pt_site, "role | filler | tpr | final");
  sc_ptr->add_option("--head", pt_head, "mlp | linear");
  sc_ptr->add_option("--epochs", pt_epochs, "training epochs");
  sc_ptr->add_option("--seed", pt_seed, "probe seed");
  sc_ptr->add_option("--max-source-len", pt_max_src, "source truncation");
  sc_ptr->add_option("--max-len", pt_max_tgt, "target truncation");

  // analyze-roles
  auto* sc_roles = app.add_subcommand("analyze-roles", "role-attention discreteness census");
  std::string ar_ckpt, ar_corpus, ar_vocab, ar_site = "dec-cross";
  int ar_layer = 1;
  double ar_threshold = 0.98;
  sc_roles->add_option("--checkpoint", ar_ckpt, "model checkpoint")->required();
  sc_roles->add_option("--corpus", ar_corpus, "JSONL corpus")->required();
  sc_roles->add_option("--vocab", ar_vocab, "vocabulary file")->required();
  sc_roles->add_option("--layer", ar_layer, "layer, 1-based");
  sc_roles->add_option("--site", ar_site, "enc-self | dec-self | dec-cross");
  sc_roles->add_option("--threshold", ar_threshold, "discreteness threshold");

  try {
    app.parse(argc, argv);
    common.seed_set = tr_seed->count() > 0 || gc_seed->count() > 0;
    if (sc_vocab->parsed()) return run_build_vocab(bv_corpus, bv_output, bv_size);
    if (sc_train->parsed())
      return run_train(common, tr_corpus, tr_vocab, tr_output, tr_resume, tr_steps,
                       tr_log_every);
    if (sc_generate->parsed()) return run_generate(ge_ckpt, ge_corpus, ge_vocab, gen);
    if (sc_evaluate->parsed()) return run_evaluate(ge_ckpt, ge_corpus, ge_vocab, gen);
    if (sc_count->parsed()) return run_count_params(common);
    if (sc_grad->parsed()) return run_grad_check(common);
    if (sc_pex->parsed())
      return run_probe_extract(px_ckpt, px_data, px_vocab, px_output, px_layer, px_site,
                               px_binding);
    if (sc_ptr->parsed())
      return run_probe_train(pt_data, pt_vocab, pt_dump, pt_layer, pt_site, pt_head, pt_epochs,
                             pt_seed, pt_max_src, pt_max_tgt);
    if (sc_roles->parsed())
      return run_analyze_roles(ar_ckpt, ar_corpus, ar_vocab, ar_layer, ar_site, ar_threshold);
    log_line("no subcommand given");
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const tpt::ConfigError& e) {
    log_line(std::string("config error: ") + e.what());
    return 2;
  } catch (const tpt::DataError& e) {
    log_line(std::string("data error: ") + e.what());
    return 3;
  } catch (const tpt::CheckpointError& e) {
    log_line(std::string("checkpoint error: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return 1;
  }
}
