// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace ssladd {

void StageConfig::Validate() const {
  adam.Validate();
  Require(batch_size >= 1, "batch_size must be positive");
  Require(max_epochs >= 1, "max_epochs must be positive");
  Require(patience >= 1, "patience must be at least 1");
  Require(grad_clip >= 0.0, "grad_clip must be non-negative (0 disables clipping)");
  Require(augment >= 0.0 && augment <= 1.0, "augment must lie in [0, 1]");
  Require(dev_fraction > 0.0 && dev_fraction < 1.0, "dev_fraction must lie in (0, 1)");
}

void RunConfig::Validate() const {
  corpus.Validate();
  model.Validate();
  pretrain.Validate();
  finetune.Validate();
  tdcf.Validate();
  Require(!out_dir.empty(), "run.out_dir must not be empty");
}

std::filesystem::path RunConfig::ManifestPath() const {
  if (!manifest.empty()) return manifest;
  return std::filesystem::path(out_dir) / "corpus" / "manifest.tsv";
}

RunConfig DefaultRunConfig() {
  RunConfig c;
  c.pretrain.adam.lr = 1e-5;
  c.finetune.adam.lr = 5e-6;
  return c;
}

namespace {

std::string Str(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string Str(std::uint64_t v) { return std::to_string(v); }
std::string Str(bool v) { return v ? "true" : "false"; }

[[noreturn]] void BadValue(const std::string& key, std::string_view v, const char* expected) {
  Fail(ErrorCategory::kInvalidArgument,
       "config key '" + key + "': invalid value '" + std::string(v) + "' (expected " + expected + ")");
}

template <class T>
T ParseInt(const std::string& key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) BadValue(key, v, "a non-negative integer");
  return out;
}

double ParseReal(const std::string& key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
    BadValue(key, v, "a finite number");
  return out;
}

bool ParseBool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  BadValue(key, v, "true or false");
}

std::vector<std::string_view> SplitList(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const std::size_t c = v.find(',');
    std::string_view item = v.substr(0, c);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.push_back(item);
    if (c == std::string_view::npos) break;
    v.remove_prefix(c + 1);
  }
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;

  std::string dotted() const { return section + "." + key; }
};

// Accessors are generic lambdas returning a reference to the field, used
// with both const and mutable configs.
template <class A>
Binding Size(std::string s, std::string k, A acc) {
  const std::string name = s + "." + k;
  return {s, k, [acc](const RunConfig& c) { return Str(static_cast<std::uint64_t>(acc(c))); },
          [acc, name](RunConfig& c, std::string_view v) {
            acc(c) = static_cast<std::remove_reference_t<decltype(acc(c))>>(ParseInt<std::uint64_t>(name, v));
          }};
}

template <class A>
Binding Real(std::string s, std::string k, A acc) {
  const std::string name = s + "." + k;
  return {s, k, [acc](const RunConfig& c) { return Str(static_cast<double>(acc(c))); },
          [acc, name](RunConfig& c, std::string_view v) { acc(c) = ParseReal(name, v); }};
}

template <class A>
Binding Flag(std::string s, std::string k, A acc) {
  const std::string name = s + "." + k;
  return {s, k, [acc](const RunConfig& c) { return Str(static_cast<bool>(acc(c))); },
          [acc, name](RunConfig& c, std::string_view v) { acc(c) = ParseBool(name, v); }};
}

template <class A>
Binding Text(std::string s, std::string k, A acc) {
  return {s, k, [acc](const RunConfig& c) { return std::string(acc(c)); },
          [acc](RunConfig& c, std::string_view v) { acc(c) = std::string(v); }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

void AddStage(std::vector<Binding>& b, const std::string& s, StageConfig RunConfig::*stage, bool finetune) {
  auto acc = [stage](auto& c) -> auto& { return c.*stage; };
  b.push_back(Real(s, "lr", [acc](auto& c) -> auto& { return acc(c).adam.lr; }));
  b.push_back(Real(s, "beta1", [acc](auto& c) -> auto& { return acc(c).adam.beta1; }));
  b.push_back(Real(s, "beta2", [acc](auto& c) -> auto& { return acc(c).adam.beta2; }));
  b.push_back(Real(s, "adam_eps", [acc](auto& c) -> auto& { return acc(c).adam.eps; }));
  b.push_back(Real(s, "weight_decay", [acc](auto& c) -> auto& { return acc(c).adam.weight_decay; }));
  b.push_back(Size(s, "batch_size", [acc](auto& c) -> auto& { return acc(c).batch_size; }));
  b.push_back(Size(s, "max_epochs", [acc](auto& c) -> auto& { return acc(c).max_epochs; }));
  b.push_back(Size(s, "patience", [acc](auto& c) -> auto& { return acc(c).patience; }));
  b.push_back(Real(s, "grad_clip", [acc](auto& c) -> auto& { return acc(c).grad_clip; }));
  if (finetune) {
    b.push_back({s, "freeze_mode", [acc](const RunConfig& c) { return std::string(FreezeModeName(acc(c).freeze_mode)); },
                 [acc](RunConfig& c, std::string_view v) { acc(c).freeze_mode = FreezeModeFromName(v); }});
    b.push_back(Real(s, "augment", [acc](auto& c) -> auto& { return acc(c).augment; }));
  } else {
    b.push_back(Real(s, "dev_fraction", [acc](auto& c) -> auto& { return acc(c).dev_fraction; }));
  }
}

const std::vector<Binding>& Bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    b.push_back({"run", "seed", [](const RunConfig& c) { return Str(c.seed); },
                 [](RunConfig& c, std::string_view v) { c.seed = ParseInt<std::uint64_t>("run.seed", v); }});
    b.push_back(Text("run", "out_dir", FIELD(out_dir)));
    b.push_back(Text("run", "manifest", FIELD(manifest)));

    b.push_back(Size("corpus", "pretrain", FIELD(corpus.pretrain)));
    b.push_back(Size("corpus", "train", FIELD(corpus.train)));
    b.push_back(Size("corpus", "dev", FIELD(corpus.dev)));
    b.push_back(Size("corpus", "eval", FIELD(corpus.eval)));
    b.push_back(Size("corpus", "sample_rate", FIELD(corpus.sample_rate)));
    b.push_back(Real("corpus", "duration", FIELD(corpus.duration_s)));
    b.push_back(Real("corpus", "duration_jitter", FIELD(corpus.duration_jitter_s)));

    b.push_back(Size("encoder", "num_layers", FIELD(model.encoder.num_layers)));
    b.push_back(Size("encoder", "hidden_dim", FIELD(model.encoder.hidden_dim)));
    b.push_back(Size("encoder", "num_heads", FIELD(model.encoder.num_heads)));
    b.push_back(Size("encoder", "ffn_dim", FIELD(model.encoder.ffn_dim)));
    b.push_back({"encoder", "conv_strides",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t v : c.model.encoder.conv_strides) s += (s.empty() ? "" : ",") + std::to_string(v);
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> strides;
                   for (auto item : SplitList(v)) strides.push_back(ParseInt<std::size_t>("encoder.conv_strides", item));
                   if (strides.empty()) BadValue("encoder.conv_strides", v, "a comma-separated list of strides");
                   c.model.encoder.conv_strides = strides;
                 }});
    b.push_back(Size("encoder", "conv_channels", FIELD(model.encoder.conv_channels)));
    b.push_back(Size("encoder", "quant_dim", FIELD(model.encoder.quant_dim)));
    b.push_back(Size("encoder", "codebook_size", FIELD(model.encoder.codebook_size)));
    b.push_back(Real("encoder", "mask_prob", FIELD(model.encoder.mask_prob)));
    b.push_back(Size("encoder", "mask_span", FIELD(model.encoder.mask_span)));
    b.push_back(Real("encoder", "temperature", FIELD(model.encoder.temperature)));
    b.push_back(Size("encoder", "num_distractors", FIELD(model.encoder.num_distractors)));

    b.push_back(Size("peft", "lora_rank", FIELD(model.peft.lora_rank)));
    b.push_back(Size("peft", "adapter_dim", FIELD(model.peft.adapter_dim)));
    b.push_back(Size("peft", "adapter_channels", FIELD(model.peft.adapter_channels)));
    b.push_back({"peft", "lora_targets",
                 [](const RunConfig& c) {
                   std::string s;
                   const auto& p = c.model.peft;
                   for (auto [on, n] : {std::pair{p.lora_query, "q"}, {p.lora_key, "k"}, {p.lora_value, "v"}})
                     if (on) s += (s.empty() ? "" : ",") + std::string(n);
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   auto& p = c.model.peft;
                   p.lora_query = p.lora_key = p.lora_value = false;
                   for (auto item : SplitList(v)) {
                     if (item == "q") p.lora_query = true;
                     else if (item == "k") p.lora_key = true;
                     else if (item == "v") p.lora_value = true;
                     else BadValue("peft.lora_targets", v, "a list drawn from q,k,v");
                   }
                 }});
    b.push_back({"peft", "adapter_positions",
                 [](const RunConfig& c) {
                   std::string s;
                   const auto& p = c.model.peft;
                   if (p.adapter_after_mha) s = "mha";
                   if (p.adapter_after_ffn) s += s.empty() ? "ffn" : ",ffn";
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   auto& p = c.model.peft;
                   p.adapter_after_mha = p.adapter_after_ffn = false;
                   for (auto item : SplitList(v)) {
                     if (item == "mha") p.adapter_after_mha = true;
                     else if (item == "ffn") p.adapter_after_ffn = true;
                     else BadValue("peft.adapter_positions", v, "a list drawn from mha,ffn");
                   }
                 }});
    b.push_back(Flag("peft", "freeze_base", FIELD(model.peft.freeze_base)));

    b.push_back(Size("hamoe", "compress_dim", FIELD(model.hamoe.compress_dim)));
    b.push_back(Size("hamoe", "num_experts", FIELD(model.hamoe.num_experts)));
    b.push_back(Size("hamoe", "top_k", FIELD(model.hamoe.top_k)));
    b.push_back(Size("hamoe", "expert_hidden", FIELD(model.hamoe.expert_hidden)));

    b.push_back(Size("head", "hidden", FIELD(model.head.hidden)));
    b.push_back(Real("head", "bonafide_weight", FIELD(model.head.bonafide_weight)));
    b.push_back(Real("head", "spoof_weight", FIELD(model.head.spoof_weight)));

    AddStage(b, "pretrain", &RunConfig::pretrain, false);
    AddStage(b, "finetune", &RunConfig::finetune, true);

    b.push_back({"tdcf", "revision", [](const RunConfig& c) { return std::string(TdcfRevisionName(c.tdcf.revision)); },
                 [](RunConfig& c, std::string_view v) { c.tdcf.revision = TdcfRevisionFromName(v); }});
    b.push_back(Real("tdcf", "p_spoof", FIELD(tdcf.p_spoof)));
    b.push_back(Real("tdcf", "p_tar", FIELD(tdcf.p_tar)));
    b.push_back(Real("tdcf", "p_non", FIELD(tdcf.p_non)));
    b.push_back(Real("tdcf", "c_miss", FIELD(tdcf.c_miss)));
    b.push_back(Real("tdcf", "c_fa", FIELD(tdcf.c_fa)));
    b.push_back(Real("tdcf", "c_miss_cm", FIELD(tdcf.c_miss_cm)));
    b.push_back(Real("tdcf", "c_fa_cm", FIELD(tdcf.c_fa_cm)));
    b.push_back(Real("tdcf", "c_fa_spoof", FIELD(tdcf.c_fa_spoof)));
    b.push_back(Real("tdcf", "p_miss_asv", FIELD(tdcf.p_miss_asv)));
    b.push_back(Real("tdcf", "p_fa_asv", FIELD(tdcf.p_fa_asv)));
    b.push_back(Real("tdcf", "p_miss_spoof_asv", FIELD(tdcf.p_miss_spoof_asv)));
    b.push_back(Real("tdcf", "p_fa_spoof_asv", FIELD(tdcf.p_fa_spoof_asv)));
    return b;
  }();
  return table;
}

#undef FIELD

const Binding& FindBinding(std::string_view section, std::string_view key) {
  for (const Binding& b : Bindings())
    if (b.section == section && b.key == key) return b;
  Fail(ErrorCategory::kInvalidArgument, "unknown config key '" + std::string(section) + "." + std::string(key) + "'");
}

}  // namespace

void SetConfigValue(RunConfig& cfg, std::string_view dotted_key, std::string_view value) {
  const std::size_t dot = dotted_key.find('.');
  if (dot == std::string_view::npos)
    Fail(ErrorCategory::kInvalidArgument, "config key '" + std::string(dotted_key) + "' must look like section.key");
  FindBinding(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(cfg, value);
}

std::string GetConfigValue(const RunConfig& cfg, std::string_view dotted_key) {
  const std::size_t dot = dotted_key.find('.');
  if (dot == std::string_view::npos)
    Fail(ErrorCategory::kInvalidArgument, "config key '" + std::string(dotted_key) + "' must look like section.key");
  return FindBinding(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).get(cfg);
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const Binding& b : Bindings()) keys.push_back(b.dotted());
  return keys;
}

RunConfig ParseRunConfig(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    Fail(ErrorCategory::kFormat, origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig cfg = DefaultRunConfig();
  for (const auto& [name, node] : tree) {
    try {
      if (node.empty()) {
        FindBinding("run", name).set(cfg, node.data());
        continue;
      }
      for (const auto& [key, leaf] : node) FindBinding(name, key).set(cfg, leaf.data());
    } catch (const Error& e) {
      Fail(e.category(), origin + ": " + e.what());
    }
  }
  try {
    cfg.Validate();
  } catch (const Error& e) {
    Fail(e.category(), origin + ": " + e.what());
  }
  return cfg;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCategory::kIo, "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseRunConfig(ss.str(), path.string());
}

std::string FormatRunConfig(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const Binding& b : Bindings()) {
    if (b.section != section) {
      if (!section.empty()) out += '\n';
      section = b.section;
      out += "[" + section + "]\n";
    }
    out += b.key + " = " + b.get(cfg) + "\n";
  }
  return out;
}

}  // namespace ssladd
