#include "covdistill/config_json.hpp"

#include <set>

#include "covdistill/digest.hpp"
#include "covdistill/error.hpp"

namespace covdistill {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const char* what, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw Error(ErrorKind::Config, std::string(what) + " must be a JSON object");
  const std::set<std::string> keys(known.begin(), known.end());
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw Error(ErrorKind::Config, std::string("unknown ") + what + " key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string(what) + "." + key + ": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const SurrogateConfig& c) {
  j = json{{"embed_dim", c.embed_dim},
           {"n_heads", c.n_heads},
           {"n_queries", c.n_queries},
           {"attn_dim", c.attn_dim},
           {"hidden_dim", c.hidden_dim},
           {"proj_dim", c.proj_dim},
           {"n_residual_blocks", c.n_residual_blocks},
           {"dropout_p", c.dropout_p},
           {"n_labels", c.n_labels},
           {"use_attention", c.use_attention},
           {"attention", c.attention == AttentionKind::Cross ? "cross" : "self"},
           {"init_seed", c.init_seed}};
}

void from_json(const json& j, SurrogateConfig& c) {
  const char* w = "model";
  reject_unknown(j, w,
                 {"embed_dim", "n_heads", "n_queries", "attn_dim", "hidden_dim", "proj_dim", "n_residual_blocks",
                  "dropout_p", "n_labels", "use_attention", "attention", "init_seed"});
  read(j, "embed_dim", c.embed_dim, w);
  read(j, "n_heads", c.n_heads, w);
  read(j, "n_queries", c.n_queries, w);
  read(j, "attn_dim", c.attn_dim, w);
  read(j, "hidden_dim", c.hidden_dim, w);
  read(j, "proj_dim", c.proj_dim, w);
  read(j, "n_residual_blocks", c.n_residual_blocks, w);
  read(j, "dropout_p", c.dropout_p, w);
  read(j, "n_labels", c.n_labels, w);
  read(j, "use_attention", c.use_attention, w);
  read(j, "init_seed", c.init_seed, w);
  std::string kind = c.attention == AttentionKind::Cross ? "cross" : "self";
  read(j, "attention", kind, w);
  if (kind == "cross") {
    c.attention = AttentionKind::Cross;
  } else if (kind == "self") {
    c.attention = AttentionKind::Self;
  } else {
    throw Error(ErrorKind::Config, "model.attention must be 'cross' or 'self', got '" + kind + "'");
  }
}

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"n_scenes", c.n_scenes},
           {"embed_dim", c.embed_dim},
           {"seq_len_min", c.seq_len_min},
           {"seq_len_max", c.seq_len_max},
           {"prevalence", c.prevalence},
           {"signal_strength", c.signal_strength},
           {"noise_std", c.noise_std},
           {"nuisance_std", c.nuisance_std},
           {"event_frames_min", c.event_frames_min},
           {"event_frames_max", c.event_frames_max},
           {"event_marker", c.event_marker},
           {"context_strength", c.context_strength},
           {"context_modulation", c.context_modulation},
           {"seed", c.seed}};
}

void from_json(const json& j, GeneratorConfig& c) {
  const char* w = "generator";
  reject_unknown(j, w,
                 {"n_scenes", "embed_dim", "seq_len_min", "seq_len_max", "prevalence", "signal_strength",
                  "noise_std", "nuisance_std", "event_frames_min", "event_frames_max", "event_marker",
                  "context_strength", "context_modulation", "seed"});
  read(j, "n_scenes", c.n_scenes, w);
  read(j, "embed_dim", c.embed_dim, w);
  read(j, "seq_len_min", c.seq_len_min, w);
  read(j, "seq_len_max", c.seq_len_max, w);
  read(j, "prevalence", c.prevalence, w);
  read(j, "signal_strength", c.signal_strength, w);
  read(j, "noise_std", c.noise_std, w);
  read(j, "nuisance_std", c.nuisance_std, w);
  read(j, "event_frames_min", c.event_frames_min, w);
  read(j, "event_frames_max", c.event_frames_max, w);
  read(j, "event_marker", c.event_marker, w);
  read(j, "context_strength", c.context_strength, w);
  read(j, "context_modulation", c.context_modulation, w);
  read(j, "seed", c.seed, w);
}

void to_json(json& j, const TeacherTargets& c) {
  json groups = json::object();
  for (const auto& g : c.groups) groups[group_roman(g.group)] = {{"precision", g.precision}, {"recall", g.recall}};
  j = json{{"groups", groups}, {"seed", c.seed}};
}

void from_json(const json& j, TeacherTargets& c) {
  const char* w = "teacher";
  reject_unknown(j, w, {"groups", "seed"});
  read(j, "seed", c.seed, w);
  auto it = j.find("groups");
  if (it == j.end()) return;
  if (!it->is_object()) throw Error(ErrorKind::Config, "teacher.groups must be an object keyed by group numeral");
  c.groups.clear();
  for (const auto& [k, v] : it->items()) {
    const auto g = parse_group(k);
    if (!g) throw Error(ErrorKind::Config, "teacher.groups: unknown group '" + k + "'");
    reject_unknown(v, "teacher group", {"precision", "recall"});
    GroupTarget t{*g, 0.0, 0.0};
    if (!v.contains("precision") || !v.contains("recall")) {
      throw Error(ErrorKind::Config, "teacher.groups." + k + " needs precision and recall");
    }
    read(v, "precision", t.precision, "teacher group");
    read(v, "recall", t.recall, "teacher group");
    c.groups.push_back(t);
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"weight_decay", c.weight_decay},
           {"early_stop_patience", c.early_stop_patience},
           {"label_source", to_string(c.label_source)},
           {"shuffle_seed", c.shuffle_seed},
           {"threshold", c.threshold}};
}

void from_json(const json& j, TrainConfig& c) {
  const char* w = "train";
  reject_unknown(j, w,
                 {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps", "weight_decay",
                  "early_stop_patience", "label_source", "shuffle_seed", "threshold"});
  read(j, "epochs", c.epochs, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "learning_rate", c.learning_rate, w);
  read(j, "beta1", c.beta1, w);
  read(j, "beta2", c.beta2, w);
  read(j, "adam_eps", c.adam_eps, w);
  read(j, "weight_decay", c.weight_decay, w);
  read(j, "early_stop_patience", c.early_stop_patience, w);
  read(j, "shuffle_seed", c.shuffle_seed, w);
  read(j, "threshold", c.threshold, w);
  std::string src = to_string(c.label_source);
  read(j, "label_source", src, w);
  c.label_source = parse_label_source(src);
}

std::uint64_t json_digest(const json& j) { return fnv1a64(j.dump()); }

}  // namespace covdistill
