#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "icsel/common.hpp"

namespace icsel {

// A single classification example. Train examples get dense ids 0..N_tr-1 so
// an id doubles as a row index into score vectors and datamodel weights; dev
// and test ids continue the numbering after the train split.
struct TrainingExample {
  int id = -1;
  int source_id = -1;  // id field from the source file, kept for provenance
  std::vector<std::pair<std::string, std::string>> input;  // field name -> text
  int label = 0;
  std::optional<bool> gold;  // whether label matches the gold label, if known
  int origin = -1;  // shared by relabeled copies of one underlying input

  const std::string& field(const std::string& name) const {
    for (const auto& [k, v] : input)
      if (k == name) return v;
    throw Error("example " + std::to_string(id) + " missing field '" + name + "'");
  }
};

inline std::string input_text(const TrainingExample& ex) {
  std::vector<std::string> parts;
  for (const auto& [k, v] : ex.input) parts.push_back(v);
  return join(parts, " ");
}

// On-disk description of a task: where the raw examples live, how prompts are
// rendered, and how the train/dev/test splits are drawn.
struct DatasetDescriptor {
  std::string name;
  std::string template_text;            // uses {field} and {label} placeholders
  std::vector<std::string> verbalizers;  // one per class, fills {label}
  std::vector<std::string> fields;       // input fields in render order
  std::string separator = "\n\n";
  int k = 4;
  int train_per_class = -1;  // -1: floor(1000 / C)
  int dev_per_class = 50;
  int test_per_class = -1;   // -1: floor(1000 / C)
  uint64_t seed = 0;
  std::string examples_file;

  static DatasetDescriptor from_json(const json& j);
  static DatasetDescriptor from_file(const std::string& path);
  json to_json() const;
  void validate() const;
};

struct Dataset {
  std::string name;
  std::vector<std::string> verbalizers;
  std::string template_text;
  std::vector<std::string> fields;
  std::string separator = "\n\n";
  int k = 4;
  bool unlabeled = false;  // true after build_unlabeled
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> dev;
  std::vector<TrainingExample> test;

  int num_classes() const { return static_cast<int>(verbalizers.size()); }
  int n_train() const { return static_cast<int>(train.size()); }

  const TrainingExample& train_by_id(int id) const {
    if (id < 0 || id >= n_train() || train[static_cast<size_t>(id)].id != id)
      throw Error("train id out of range: " + std::to_string(id));
    return train[static_cast<size_t>(id)];
  }

  std::vector<int> train_ids_of_class(int label) const {
    std::vector<int> out;
    for (const auto& ex : train)
      if (ex.label == label) out.push_back(ex.id);
    return out;
  }
};

// A prompt plus everything needed to score it. example_ids / test_gold /
// test_ref carry provenance for backends that compute scores from example
// identity (the synthetic oracle) rather than from the text; text backends
// ignore them.
struct RenderedPrompt {
  std::string text;
  std::vector<std::string> label_candidates;
  std::vector<int> example_ids;
  int test_gold = -1;  // -1 when the query's gold label is unknown
  long test_ref = -1;  // stable per-query ordinal, keys the oracle noise stream
};

// --- descriptor parsing -----------------------------------------------------

inline void DatasetDescriptor::validate() const {
  if (name.empty()) throw ConfigError("descriptor: missing name");
  if (verbalizers.empty()) throw ConfigError("descriptor: needs at least one verbalizer");
  if (fields.empty()) throw ConfigError("descriptor: needs at least one input field");
  if (k < 1) throw ConfigError("descriptor: k must be >= 1");
  if (template_text.find("{label}") == std::string::npos)
    throw ConfigError("descriptor: template has no {label} placeholder");
  // Every placeholder must name a declared field (or the label slot).
  size_t pos = 0;
  while ((pos = template_text.find('{', pos)) != std::string::npos) {
    size_t end = template_text.find('}', pos);
    if (end == std::string::npos)
      throw ConfigError("descriptor: unbalanced '{' in template");
    std::string ph = template_text.substr(pos + 1, end - pos - 1);
    if (ph != "label" &&
        std::find(fields.begin(), fields.end(), ph) == fields.end())
      throw ConfigError("descriptor: unknown placeholder {" + ph + "}");
    pos = end + 1;
  }
}

inline DatasetDescriptor DatasetDescriptor::from_json(const json& j) {
  DatasetDescriptor d;
  if (!j.is_object()) throw ConfigError("descriptor must be a JSON object");
  d.name = j.value("name", "");
  d.template_text = j.value("template", "");
  d.verbalizers = j.value("verbalizers", std::vector<std::string>{});
  d.fields = j.value("fields", std::vector<std::string>{});
  d.separator = j.value("separator", std::string("\n\n"));
  d.k = j.value("k", 4);
  d.train_per_class = j.value("train_per_class", -1);
  d.dev_per_class = j.value("dev_per_class", 50);
  d.test_per_class = j.value("test_per_class", -1);
  d.seed = j.value("seed", 0ull);
  d.examples_file = j.value("examples_file", "");
  d.validate();
  return d;
}

inline DatasetDescriptor DatasetDescriptor::from_file(const std::string& path) {
  DatasetDescriptor d = from_json(read_json_file(path));
  // examples_file is resolved relative to the descriptor location.
  if (!d.examples_file.empty()) {
    std::filesystem::path p(d.examples_file);
    if (p.is_relative())
      d.examples_file = (std::filesystem::path(path).parent_path() / p).string();
  }
  return d;
}

inline json DatasetDescriptor::to_json() const {
  return json{{"name", name},
              {"template", template_text},
              {"verbalizers", verbalizers},
              {"fields", fields},
              {"separator", separator},
              {"k", k},
              {"train_per_class", train_per_class},
              {"dev_per_class", dev_per_class},
              {"test_per_class", test_per_class},
              {"seed", seed},
              {"examples_file", examples_file}};
}

// --- rendering ---------------------------------------------------------------

namespace detail {

inline std::string fill_template(const std::string& tmpl,
                                 const std::function<std::string(const std::string&)>& lookup) {
  std::string out;
  out.reserve(tmpl.size());
  size_t pos = 0;
  while (pos < tmpl.size()) {
    size_t open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    size_t close = tmpl.find('}', open);
    if (close == std::string::npos) throw Error("unbalanced '{' in template");
    out += lookup(tmpl.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
  return out;
}

}  // namespace detail

// Renders one in-context demonstration, label slot filled with its verbalizer.
inline std::string render_example(const TrainingExample& ex, const Dataset& ds) {
  if (ex.label < 0 || ex.label >= ds.num_classes())
    throw Error("label out of range for example " + std::to_string(ex.id));
  return detail::fill_template(ds.template_text, [&](const std::string& ph) {
    if (ph == "label") return ds.verbalizers[static_cast<size_t>(ex.label)];
    return ex.field(ph);
  });
}

// Renders the trailing query: same template with an empty label slot, so the
// backend scores the label candidates at the next position.
inline std::string render_query_stub(
    const std::vector<std::pair<std::string, std::string>>& fields,
    const Dataset& ds) {
  auto lookup = [&](const std::string& ph) -> std::string {
    if (ph == "label") return "";
    for (const auto& [k, v] : fields)
      if (k == ph) return v;
    throw Error("query missing field '" + ph + "'");
  };
  std::string text = detail::fill_template(ds.template_text, lookup);
  // A template usually ends "...{label}"; strip trailing spaces left behind by
  // the empty slot so candidates attach cleanly.
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

inline RenderedPrompt render(const std::vector<int>& example_ids,
                             const TrainingExample& query, const Dataset& ds) {
  std::vector<std::string> parts;
  parts.reserve(example_ids.size() + 1);
  for (int id : example_ids) parts.push_back(render_example(ds.train_by_id(id), ds));
  parts.push_back(render_query_stub(query.input, ds));
  RenderedPrompt rp;
  rp.text = join(parts, ds.separator);
  rp.label_candidates = ds.verbalizers;
  rp.example_ids = example_ids;
  if (query.gold.has_value())
    rp.test_gold = *query.gold ? query.label : -1;
  else
    rp.test_gold = query.label;
  rp.test_ref = query.id;
  return rp;
}

// Renders a prompt whose query is a bare string (content-free calibration
// probes); every input field is filled with the same text.
inline RenderedPrompt render_probe(const std::vector<int>& example_ids,
                                   const std::string& probe_text,
                                   const Dataset& ds) {
  std::vector<std::pair<std::string, std::string>> fields;
  for (const auto& f : ds.fields) fields.emplace_back(f, probe_text);
  std::vector<std::string> parts;
  parts.reserve(example_ids.size() + 1);
  for (int id : example_ids) parts.push_back(render_example(ds.train_by_id(id), ds));
  parts.push_back(render_query_stub(fields, ds));
  RenderedPrompt rp;
  rp.text = join(parts, ds.separator);
  rp.label_candidates = ds.verbalizers;
  rp.example_ids = example_ids;
  return rp;
}

// --- loading -----------------------------------------------------------------

namespace detail {

struct RawExample {
  int source_id;
  std::vector<std::pair<std::string, std::string>> input;
  int label;
  std::optional<bool> gold;
};

inline std::vector<RawExample> parse_examples_jsonl(
    const std::filesystem::path& path, const DatasetDescriptor& desc) {
  std::vector<RawExample> rows;
  int c = static_cast<int>(desc.verbalizers.size());
  for_each_jsonl(path, [&](const json& j, size_t lineno) {
    auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
    if (!j.is_object() || !j.contains("id") || !j.contains("input") ||
        !j.contains("label"))
      throw LoadError(where() + ": example needs id, input, label");
    RawExample r;
    r.source_id = j.at("id").get<int>();
    if (r.source_id < 0) throw LoadError(where() + ": negative id");
    const json& in = j.at("input");
    if (!in.is_object()) throw LoadError(where() + ": input must be an object");
    for (const auto& f : desc.fields) {
      if (!in.contains(f))
        throw LoadError(where() + ": input missing field '" + f + "'");
      r.input.emplace_back(f, in.at(f).get<std::string>());
    }
    r.label = j.at("label").get<int>();
    if (r.label < 0 || r.label >= c)
      throw LoadError(where() + ": label " + std::to_string(r.label) +
                      " outside [0, " + std::to_string(c) + ")");
    if (j.contains("gold")) r.gold = j.at("gold").get<bool>();
    rows.push_back(std::move(r));
  });
  if (rows.empty()) throw LoadError("empty split: " + path.string());
  return rows;
}

}  // namespace detail

// Loads the raw corpus, dedupes exact input repeats (keeping the first), and
// draws disjoint class-balanced train/dev/test splits with the descriptor
// seed. Train examples get ids 0..N_tr-1; dev and test continue after them.
inline Dataset load_dataset(const DatasetDescriptor& desc) {
  if (desc.examples_file.empty())
    throw ConfigError("descriptor: missing examples_file");
  auto rows = detail::parse_examples_jsonl(desc.examples_file, desc);

  std::set<std::string> seen;
  std::vector<detail::RawExample> unique;
  for (auto& r : rows) {
    std::vector<std::string> vals;
    for (const auto& [k, v] : r.input) vals.push_back(v);
    if (seen.insert(join(vals, "\x1f")).second) unique.push_back(std::move(r));
  }

  int c = static_cast<int>(desc.verbalizers.size());
  int train_pc = desc.train_per_class >= 0 ? desc.train_per_class : 1000 / c;
  int test_pc = desc.test_per_class >= 0 ? desc.test_per_class : 1000 / c;
  int dev_pc = desc.dev_per_class;
  if (train_pc < 1) throw ConfigError("descriptor: train_per_class must be >= 1");

  std::vector<std::vector<size_t>> by_class(static_cast<size_t>(c));
  for (size_t i = 0; i < unique.size(); ++i)
    by_class[static_cast<size_t>(unique[i].label)].push_back(i);

  int need = train_pc + dev_pc + test_pc;
  for (int y = 0; y < c; ++y) {
    if (static_cast<int>(by_class[static_cast<size_t>(y)].size()) < need)
      throw ConfigError("class " + std::to_string(y) + " has " +
                        std::to_string(by_class[static_cast<size_t>(y)].size()) +
                        " unique examples, need " + std::to_string(need) +
                        " for the requested splits");
  }

  Rng rng(mix_seed(desc.seed, fnv1a("splits")));
  std::vector<size_t> train_rows, dev_rows, test_rows;
  for (int y = 0; y < c; ++y) {
    auto& pool = by_class[static_cast<size_t>(y)];
    std::shuffle(pool.begin(), pool.end(), rng);
    size_t off = 0;
    for (int i = 0; i < train_pc; ++i) train_rows.push_back(pool[off++]);
    for (int i = 0; i < dev_pc; ++i) dev_rows.push_back(pool[off++]);
    for (int i = 0; i < test_pc; ++i) test_rows.push_back(pool[off++]);
  }
  // Stable id assignment independent of class iteration order.
  auto by_source = [&](size_t a, size_t b) {
    return unique[a].source_id < unique[b].source_id;
  };
  std::sort(train_rows.begin(), train_rows.end(), by_source);
  std::sort(dev_rows.begin(), dev_rows.end(), by_source);
  std::sort(test_rows.begin(), test_rows.end(), by_source);

  Dataset ds;
  ds.name = desc.name;
  ds.verbalizers = desc.verbalizers;
  ds.template_text = desc.template_text;
  ds.fields = desc.fields;
  ds.separator = desc.separator;
  ds.k = desc.k;

  int next_id = 0;
  auto emit = [&](const std::vector<size_t>& idxs,
                  std::vector<TrainingExample>& out) {
    for (size_t row : idxs) {
      const auto& r = unique[row];
      TrainingExample ex;
      ex.id = next_id++;
      ex.source_id = r.source_id;
      ex.input = r.input;
      ex.label = r.label;
      ex.gold = r.gold.has_value() ? r.gold : std::optional<bool>(true);
      ex.origin = ex.id;
      out.push_back(std::move(ex));
    }
  };
  emit(train_rows, ds.train);
  emit(dev_rows, ds.dev);
  emit(test_rows, ds.test);
  return ds;
}

inline Dataset load_dataset(const std::string& descriptor_path) {
  return load_dataset(DatasetDescriptor::from_file(descriptor_path));
}

// Expands each train example into C relabeled copies for experiments where
// gold labels are unavailable: copy (i, y) has id i*C + y, origin i, and
// gold set iff y is the original label. Dev and test keep gold labels (they
// are only used for measurement) and are re-numbered after the new train ids.
inline Dataset build_unlabeled(const Dataset& labeled) {
  if (labeled.unlabeled) throw Error("dataset is already unlabeled");
  for (const auto& ex : labeled.train)
    if (!ex.gold.has_value() || !*ex.gold)
      throw Error("build_unlabeled needs a gold-labeled train split");

  Dataset ds = labeled;
  ds.unlabeled = true;
  ds.train.clear();
  int c = labeled.num_classes();
  for (int i = 0; i < labeled.n_train(); ++i) {
    const auto& src = labeled.train[static_cast<size_t>(i)];
    for (int y = 0; y < c; ++y) {
      TrainingExample ex;
      ex.id = i * c + y;
      ex.source_id = src.source_id;
      ex.input = src.input;
      ex.label = y;
      ex.gold = (y == src.label);
      ex.origin = i;
      ds.train.push_back(std::move(ex));
    }
  }
  int next_id = static_cast<int>(ds.train.size());
  for (auto& ex : ds.dev) ex.id = next_id++;
  for (auto& ex : ds.test) ex.id = next_id++;
  return ds;
}

}  // namespace icsel
