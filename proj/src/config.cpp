#include "cpcssl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace cpcssl {

namespace {

// Thrown by value parsers; rewrapped with the key and origin.
struct BadValue {
  std::string what;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename Int>
Int parse_int(std::string_view s) {
  Int v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw BadValue{"expected an integer, got '" + std::string(s) + "'"};
  }
  return v;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw BadValue{"expected a number, got '" + std::string(s) + "'"};
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
T parse_value(std::string_view s);

template <> Index parse_value<Index>(std::string_view s) { return parse_int<Index>(s); }
template <> int parse_value<int>(std::string_view s) { return parse_int<int>(s); }
template <> std::uint64_t parse_value<std::uint64_t>(std::string_view s) { return parse_int<std::uint64_t>(s); }
template <> double parse_value<double>(std::string_view s) { return parse_double(s); }
template <> std::string parse_value<std::string>(std::string_view s) { return std::string(s); }

template <> bool parse_value<bool>(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue{"expected true or false, got '" + std::string(s) + "'"};
}

template <> Mode parse_value<Mode>(std::string_view s) {
  try {
    return parse_mode(s);
  } catch (const Error& e) {
    throw BadValue{e.what()};
  }
}

template <> DataFormat parse_value<DataFormat>(std::string_view s) {
  try {
    return parse_data_format(s);
  } catch (const Error& e) {
    throw BadValue{e.what()};
  }
}

template <> EncoderKind parse_value<EncoderKind>(std::string_view s) {
  if (s == "image") return EncoderKind::image;
  if (s == "text") return EncoderKind::text;
  throw BadValue{"expected image or text, got '" + std::string(s) + "'"};
}

template <> std::optional<double> parse_value<std::optional<double>>(std::string_view s) {
  if (s == "auto") return std::nullopt;
  return parse_double(s);
}

template <> std::vector<Index> parse_value<std::vector<Index>>(std::string_view s) {
  std::vector<Index> out;
  for (auto item : split_list(s)) out.push_back(parse_int<Index>(item));
  return out;
}

// filters:kernel:stride, comma separated.
template <> std::vector<ConvLayerSpec> parse_value<std::vector<ConvLayerSpec>>(std::string_view s) {
  std::vector<ConvLayerSpec> out;
  if (s.empty()) return out;
  for (auto item : split_list(s)) {
    const auto a = item.find(':');
    const auto b = a == std::string_view::npos ? a : item.find(':', a + 1);
    if (b == std::string_view::npos) {
      throw BadValue{"expected filters:kernel:stride, got '" + std::string(item) + "'"};
    }
    out.push_back({parse_int<Index>(item.substr(0, a)), parse_int<Index>(item.substr(a + 1, b - a - 1)),
                   parse_int<Index>(item.substr(b + 1))});
  }
  return out;
}

std::string format_value(Index v) { return std::to_string(v); }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(double v) { return format_double(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(Mode v) { return std::string(to_string(v)); }
std::string format_value(DataFormat v) { return std::string(to_string(v)); }
std::string format_value(EncoderKind v) { return v == EncoderKind::image ? "image" : "text"; }
std::string format_value(const std::optional<double>& v) { return v ? format_double(*v) : "auto"; }

std::string format_value(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string format_value(const std::vector<ConvLayerSpec>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i].filters) + ":" + std::to_string(v[i].kernel) + ":" +
           std::to_string(v[i].stride);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  bool is_path = false;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Access>
Field field(std::string section, std::string key, Access access, bool is_path = false) {
  using T = std::remove_cvref_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return {std::move(section), std::move(key), is_path,
          [access](ExperimentConfig& c, std::string_view v) { access(c) = parse_value<T>(v); },
          [access](const ExperimentConfig& c) { return format_value(access(const_cast<ExperimentConfig&>(c))); }};
}

#define CPCSSL_FIELD(section, key, expr) field(section, key, [](ExperimentConfig& c) -> auto& { return expr; })
#define CPCSSL_PATH(section, key, expr) field(section, key, [](ExperimentConfig& c) -> auto& { return expr; }, true)

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      CPCSSL_FIELD("data", "format", c.data.format),
      CPCSSL_PATH("data", "synthetic_spec", c.data.synthetic_spec),
      CPCSSL_FIELD("data", "synthetic_num_classes", c.data.synthetic.num_classes),
      CPCSSL_FIELD("data", "synthetic_latent_dim", c.data.synthetic.latent_dim),
      CPCSSL_FIELD("data", "synthetic_noise_sigma", c.data.synthetic.noise_sigma),
      CPCSSL_FIELD("data", "synthetic_sequence_length", c.data.synthetic.sequence_length),
      CPCSSL_FIELD("data", "synthetic_patch_height", c.data.synthetic.patch_height),
      CPCSSL_FIELD("data", "synthetic_patch_width", c.data.synthetic.patch_width),
      CPCSSL_FIELD("data", "synthetic_class_scale", c.data.synthetic.class_scale),
      CPCSSL_FIELD("data", "synthetic_latent_scale", c.data.synthetic.latent_scale),
      CPCSSL_FIELD("data", "synthetic_emission_seed", c.data.synthetic.emission_seed),
      CPCSSL_FIELD("data", "train_count", c.data.train_count),
      CPCSSL_FIELD("data", "test_count", c.data.test_count),
      CPCSSL_PATH("data", "train_data", c.data.train_data),
      CPCSSL_PATH("data", "train_labels", c.data.train_labels),
      CPCSSL_PATH("data", "test_data", c.data.test_data),
      CPCSSL_PATH("data", "test_labels", c.data.test_labels),
      CPCSSL_FIELD("data", "image_size", c.data.grid.image_size),
      CPCSSL_FIELD("data", "patch", c.data.grid.patch),
      CPCSSL_FIELD("data", "stride", c.data.grid.stride),
      CPCSSL_FIELD("data", "labeled_fraction", c.data.labeled_fraction),
      CPCSSL_PATH("data", "split_manifest", c.data.split_manifest),

      CPCSSL_FIELD("model", "encoder", c.model.encoder),
      CPCSSL_FIELD("model", "channels", c.model.image.channels),
      CPCSSL_FIELD("model", "conv_layers", c.model.image.layers),
      CPCSSL_FIELD("model", "vocab_size", c.model.text.vocab_size),
      CPCSSL_FIELD("model", "embed_dim", c.model.text.embed_dim),
      CPCSSL_FIELD("model", "sentence_length", c.model.text.sentence_length),
      CPCSSL_FIELD("model", "widths", c.model.text.widths),
      CPCSSL_FIELD("model", "filters", c.model.text.filters),
      CPCSSL_FIELD("model", "latent_dim", c.model.cpc.latent_dim),
      CPCSSL_FIELD("model", "context_dim", c.model.cpc.context_dim),
      CPCSSL_FIELD("model", "context_steps", c.model.cpc.context_steps),
      CPCSSL_FIELD("model", "prediction_steps", c.model.cpc.prediction_steps),
      CPCSSL_FIELD("model", "contrastive_size", c.model.cpc.contrastive_size),
      CPCSSL_FIELD("model", "num_classes", c.model.num_classes),
      CPCSSL_FIELD("model", "log_var_bias", c.model.log_var_bias),
      CPCSSL_FIELD("model", "predictor_scale", c.model.predictor_scale),

      CPCSSL_FIELD("train", "mode", c.train.mode),
      CPCSSL_FIELD("train", "learning_rate", c.train.learning_rate),
      CPCSSL_FIELD("train", "batch_size", c.train.batch_size),
      CPCSSL_FIELD("train", "epochs", c.train.epochs),
      CPCSSL_FIELD("train", "alpha", c.train.alpha),
      CPCSSL_FIELD("train", "weight_decay", c.train.weight_decay),
      CPCSSL_FIELD("train", "seed", c.train.seed),
      CPCSSL_FIELD("train", "topk", c.train.topk),
      CPCSSL_FIELD("train", "record_wall_ms", c.train.record_wall_ms),
      CPCSSL_FIELD("train", "checkpoint_every", c.checkpoint_every),
      CPCSSL_FIELD("train", "eval_batch_size", c.eval_batch_size),

      CPCSSL_FIELD("ccpc", "tau", c.train.gumbel.tau),
      CPCSSL_FIELD("ccpc", "anneal", c.train.gumbel.anneal),
      CPCSSL_FIELD("ccpc", "tau_min", c.train.gumbel.tau_min),
  };
  return all;
}

#undef CPCSSL_FIELD
#undef CPCSSL_PATH

const Field& find_field(const ConfigAssignment& a) {
  for (const auto& f : fields()) {
    if (f.section == a.section && f.key == a.key) return f;
  }
  throw Error(ErrorCode::config, a.origin + ": unknown key " + a.section + "." + a.key);
}

void apply(ExperimentConfig& config, const ConfigAssignment& a) {
  const Field& f = find_field(a);
  std::string value = a.value;
  if (f.is_path && !value.empty() && !a.base_dir.empty()) {
    const std::filesystem::path p(value);
    if (p.is_relative()) value = (a.base_dir / p).lexically_normal().string();
  }
  try {
    f.set(config, value);
  } catch (const BadValue& e) {
    throw Error(ErrorCode::config, a.origin + ": " + a.section + "." + a.key + ": " + e.what);
  }
}

bool assigned(const std::vector<ConfigAssignment>& assignments, std::string_view section,
              std::string_view key) {
  for (const auto& a : assignments) {
    if (a.section == section && a.key == key) return true;
  }
  return false;
}

void check(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::config, message);
}

}  // namespace

std::string_view to_string(DataFormat format) {
  switch (format) {
    case DataFormat::synthetic: return "synthetic";
    case DataFormat::idx_images: return "idx-images";
    case DataFormat::idx_sequences: return "idx-sequences";
    case DataFormat::text: return "text";
  }
  return "?";
}

DataFormat parse_data_format(std::string_view text) {
  for (auto f : {DataFormat::synthetic, DataFormat::idx_images, DataFormat::idx_sequences, DataFormat::text}) {
    if (text == to_string(f)) return f;
  }
  throw Error(ErrorCode::config, "unknown data format '" + std::string(text) +
                                     "' (synthetic, idx-images, idx-sequences, text)");
}

std::vector<ConfigAssignment> read_config_text(std::string_view text, const std::string& name,
                                               const std::filesystem::path& base_dir) {
  std::vector<ConfigAssignment> out;
  std::set<std::string> seen;
  std::string section;
  std::size_t line_number = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_number;
    const std::string origin = name + ":" + std::to_string(line_number);
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      check(line.back() == ']', origin + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      check(section == "data" || section == "model" || section == "train" || section == "ccpc",
            origin + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    check(eq != std::string_view::npos, origin + ": expected key = value");
    check(!section.empty(), origin + ": key outside any section");
    ConfigAssignment a{section, std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))),
                       origin, base_dir};
    check(seen.insert(a.section + "." + a.key).second, origin + ": duplicate key " + a.section + "." + a.key);
    find_field(a);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<ConfigAssignment> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return read_config_text(buf.str(), path.string(), path.parent_path());
}

ConfigAssignment parse_override(std::string_view text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw Error(ErrorCode::config, "--set " + std::string(text) + ": expected section.key=value");
  }
  ConfigAssignment a{std::string(trim(text.substr(0, dot))), std::string(trim(text.substr(dot + 1, eq - dot - 1))),
                     std::string(trim(text.substr(eq + 1))), "--set " + std::string(text), {}};
  find_field(a);
  return a;
}

ExperimentConfig build_config(const std::vector<ConfigAssignment>& assignments) {
  ExperimentConfig config;
  for (const auto& a : assignments) {
    if (a.section == "data" && a.key == "synthetic_spec") apply(config, a);
  }
  if (!config.data.synthetic_spec.empty()) {
    std::ifstream in(config.data.synthetic_spec);
    if (!in) throw Error(ErrorCode::io, "cannot read synthetic spec " + config.data.synthetic_spec);
    try {
      config.data.synthetic = nlohmann::json::parse(in).get<SyntheticSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, "synthetic spec " + config.data.synthetic_spec + ": " + e.what());
    }
  }
  for (const auto& a : assignments) apply(config, a);

  const bool sequences = config.data.format == DataFormat::synthetic || config.data.format == DataFormat::idx_sequences;
  if (sequences && !assigned(assignments, "model", "num_classes")) {
    config.model.num_classes = config.data.synthetic.num_classes;
  }
  if (config.data.format == DataFormat::text) {
    config.model.encoder = EncoderKind::text;
    if (!assigned(assignments, "model", "latent_dim")) config.model.cpc.latent_dim = config.model.text.latent_dim();
  } else {
    config.model.encoder = EncoderKind::image;
    if (sequences) {
      config.model.image.patch = config.data.synthetic.patch_height;
      config.model.image.channels = 1;
    } else {
      config.model.image.patch = config.data.grid.patch;
    }
  }
  validate(config);
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::vector<ConfigAssignment> assignments;
  if (!path.empty()) assignments = read_config_file(path);
  for (const auto& o : overrides) assignments.push_back(parse_override(o));
  return build_config(assignments);
}

void validate(const ExperimentConfig& c) {
  auto wrap = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(ErrorCode::config, e.what());
    }
  };
  wrap([&] { c.train.validate(); });
  wrap([&] { c.model.cpc.validate(); });
  const auto& d = c.data;
  check(d.labeled_fraction > 0.0 && d.labeled_fraction <= 1.0, "data.labeled_fraction must lie in (0, 1]");
  check(d.labeled_fraction < 1.0 || c.train.mode == Mode::supervised_only,
        "data.labeled_fraction = 1 leaves no unlabelled data for " + std::string(to_string(c.train.mode)));
  check(c.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
  check(c.eval_batch_size >= 2, "train.eval_batch_size must be >= 2");
  check(c.model.num_classes >= 2, "model.num_classes must be >= 2");
  for (Index k : c.train.topk) {
    check(k <= c.model.num_classes, "train.topk entry " + std::to_string(k) + " exceeds model.num_classes");
  }
  switch (d.format) {
    case DataFormat::synthetic:
      wrap([&] { d.synthetic.validate(); });
      check(d.train_count >= 1 && d.test_count >= 0, "data.train_count must be >= 1 and data.test_count >= 0");
      break;
    case DataFormat::idx_sequences:
      wrap([&] { d.synthetic.validate(); });
      check(!d.train_data.empty() && !d.train_labels.empty(), "idx-sequences needs data.train_data and data.train_labels");
      break;
    case DataFormat::idx_images:
      wrap([&] { d.grid.validate(); });
      check(!d.train_data.empty() && !d.train_labels.empty(), "idx-images needs data.train_data and data.train_labels");
      break;
    case DataFormat::text:
      check(!d.train_data.empty(), "text needs data.train_data");
      break;
  }
  if (d.format == DataFormat::synthetic || d.format == DataFormat::idx_sequences) {
    check(d.synthetic.patch_height == d.synthetic.patch_width, "synthetic patches must be square for the conv encoder");
    check(c.model.num_classes == d.synthetic.num_classes, "model.num_classes differs from data.synthetic_num_classes");
  }
  check(d.test_data.empty() == d.test_labels.empty() || d.format == DataFormat::text,
        "data.test_data and data.test_labels go together");
  if (c.model.encoder == EncoderKind::image) {
    check(c.model.image.channels >= 1, "model.channels must be positive");
    wrap([&] { c.model.image.sides(); });
  } else {
    check(c.model.text.vocab_size >= 3 && c.model.text.embed_dim >= 1 && c.model.text.sentence_length >= 1 &&
              c.model.text.filters >= 1 && !c.model.text.widths.empty(),
          "text encoder sizes must be positive");
    check(c.model.text.latent_dim() == c.model.cpc.latent_dim,
          "model.latent_dim must equal widths x filters = " + std::to_string(c.model.text.latent_dim()));
  }
}

std::string effective_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.section + "." + f.key);
  return out;
}

}  // namespace cpcssl
