#include "ecgxai/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ecgxai/error.hpp"
#include "ecgxai/rng.hpp"

namespace ecgxai::signal {

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

long parse_long(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    long v = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("manifest: key '" + key + "' is not an integer: '" + text + "'");
  }
}

}  // namespace

int lead_index(const std::string& name) {
  const auto& names = standard_lead_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError("unknown lead name '" + name + "'");
  return static_cast<int>(it - names.begin());
}

std::string to_string(Ventricle v) { return v == Ventricle::LV ? "LV" : "RV"; }

Ventricle parse_ventricle(const std::string& text) {
  if (text == "LV") return Ventricle::LV;
  if (text == "RV") return Ventricle::RV;
  throw ValidationError("unknown ventricle '" + text + "' (expected LV or RV)");
}

EcgSignal::EcgSignal(int steps, int leads, std::vector<float> values,
                     std::vector<std::string> lead_names)
    : steps_(steps), leads_(leads), values_(std::move(values)), lead_names_(std::move(lead_names)) {
  if (steps_ <= 0 || leads_ <= 0) {
    throw ValidationError("signal needs T > 0 and L > 0, got T=" + std::to_string(steps_) +
                          " L=" + std::to_string(leads_));
  }
  if (values_.size() != static_cast<std::size_t>(steps_) * leads_) {
    throw ValidationError("signal value count " + std::to_string(values_.size()) +
                          " does not match T*L=" + std::to_string(steps_ * leads_));
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw ValidationError("signal contains a non-finite value");
  }
  if (lead_names_.empty()) {
    if (leads_ == kDefaultLeads) {
      lead_names_.assign(standard_lead_names().begin(), standard_lead_names().end());
    } else {
      for (int l = 0; l < leads_; ++l) lead_names_.push_back("lead" + std::to_string(l + 1));
    }
  }
  if (static_cast<int>(lead_names_.size()) != leads_) {
    throw ValidationError("lead name count does not match L");
  }
}

std::vector<Ventricle> default_ventricles(int class_count) {
  std::vector<Ventricle> out(static_cast<std::size_t>(class_count), Ventricle::RV);
  for (int c = 0; c < class_count / 2; ++c) out[c] = Ventricle::LV;
  return out;
}

void LabeledDataset::validate() const {
  if (signals.size() != labels.size()) {
    throw ValidationError("dataset has " + std::to_string(signals.size()) + " signals but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (class_count <= 0) throw ValidationError("class count must be positive");
  if (!ventricle_of_class.empty() &&
      ventricle_of_class.size() != static_cast<std::size_t>(class_count)) {
    throw ValidationError("ventricle map must cover every class");
  }
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw ValidationError("label " + std::to_string(labels[i]) + " of sample " +
                            std::to_string(i) + " is outside 0.." +
                            std::to_string(class_count - 1));
    }
    if (signals[i].steps() != steps || signals[i].leads() != leads) {
      throw ValidationError("sample " + std::to_string(i) + " has shape " +
                            std::to_string(signals[i].steps()) + "x" +
                            std::to_string(signals[i].leads()) + ", dataset expects " +
                            std::to_string(steps) + "x" + std::to_string(leads));
    }
  }
}

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::Stacked: return "stacked";
    case Layout::MultiChannel: return "multichannel";
    case Layout::Image: return "image";
  }
  return "?";
}

ReshapedInput reshape(const EcgSignal& signal, Layout layout) {
  const int T = signal.steps();
  const int L = signal.leads();
  ReshapedInput out;
  out.layout = layout;
  switch (layout) {
    case Layout::Stacked:
      out.height = T * L;
      out.width = 1;
      out.channels = 1;
      out.data.resize(static_cast<std::size_t>(T) * L);
      for (int l = 0; l < L; ++l) {
        for (int t = 0; t < T; ++t) out.data[static_cast<std::size_t>(l) * T + t] = signal.at(t, l);
      }
      return out;
    case Layout::MultiChannel:
      out.height = T;
      out.width = 1;
      out.channels = L;
      break;
    case Layout::Image:
      out.height = T;
      out.width = L;
      out.channels = 1;
      break;
  }
  out.data.assign(signal.values().begin(), signal.values().end());
  return out;
}

EcgSignal unreshape(const ReshapedInput& input, int steps, int leads) {
  const std::size_t n = static_cast<std::size_t>(steps) * leads;
  if (input.data.size() != n) {
    throw ValidationError("reshaped input holds " + std::to_string(input.data.size()) +
                          " values, expected " + std::to_string(n));
  }
  if (input.layout != Layout::Stacked) return EcgSignal(steps, leads, input.data);
  std::vector<float> values(n);
  for (int l = 0; l < leads; ++l) {
    for (int t = 0; t < steps; ++t) {
      values[static_cast<std::size_t>(t) * leads + l] = input.data[static_cast<std::size_t>(l) * steps + t];
    }
  }
  return EcgSignal(steps, leads, std::move(values));
}

SplitIndices stratified_split(const LabeledDataset& dataset, SplitRatios ratios,
                              std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v > 0.0)) throw ValidationError("split ratios must be positive");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) by_class[dataset.labels[i]].push_back(i);

  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> parts = {&out.train, &out.val, &out.test};
  for (auto& [cls, members] : by_class) {
    const std::size_t n = members.size();
    if (n < parts.size()) {
      throw ValidationError("class " + std::to_string(cls) + " has " + std::to_string(n) +
                            " samples; a 3-way split needs at least 3");
    }
    // Largest remainder; ties resolve toward train, then val.
    std::array<std::size_t, 3> count{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      const double quota = static_cast<double>(n) * r[p];
      count[p] = static_cast<std::size_t>(std::floor(quota + 1e-9));
      frac[p] = quota - static_cast<double>(count[p]);
      assigned += count[p];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];
    // Every part gets at least one sample, borrowed from the largest part.
    for (std::size_t p = 0; p < 3; ++p) {
      if (count[p] == 0) {
        auto largest = std::max_element(count.begin(), count.end());
        --*largest;
        ++count[p];
      }
    }

    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(cls));
    std::vector<std::size_t> shuffled = members;
    rng.shuffle(std::span<std::size_t>(shuffled));
    std::size_t pos = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p]->insert(parts[p]->end(), shuffled.begin() + static_cast<long>(pos),
                       shuffled.begin() + static_cast<long>(pos + count[p]));
      pos += count[p];
    }
  }
  for (auto* part : parts) std::sort(part->begin(), part->end());
  return out;
}

void write_split(const SplitIndices& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write split file " + path.string());
  out << "index,part\n";
  const std::array<std::pair<const char*, const std::vector<std::size_t>*>, 3> parts = {
      std::pair{"train", &split.train}, std::pair{"val", &split.val}, std::pair{"test", &split.test}};
  for (const auto& [name, idx] : parts) {
    for (std::size_t i : *idx) out << i << ',' << name << '\n';
  }
}

SplitIndices read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read split file " + path.string());
  SplitIndices split;
  std::string line;
  std::getline(in, line);
  if (line != "index,part") throw FormatError("split file " + path.string() + " has no header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != 2) throw FormatError("malformed split line: " + line);
    const auto idx = static_cast<std::size_t>(parse_long("index", fields[0]));
    if (fields[1] == "train") split.train.push_back(idx);
    else if (fields[1] == "val") split.val.push_back(idx);
    else if (fields[1] == "test") split.test.push_back(idx);
    else throw FormatError("unknown split part '" + fields[1] + "'");
  }
  return split;
}

void write_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);

  std::ofstream manifest(dir / "manifest");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  std::vector<std::string> labels;
  labels.reserve(dataset.labels.size());
  for (int y : dataset.labels) labels.push_back(std::to_string(y));
  std::vector<std::string> lead_names;
  if (!dataset.signals.empty()) {
    lead_names = dataset.signals.front().lead_names();
  } else if (dataset.leads == kDefaultLeads) {
    lead_names.assign(standard_lead_names().begin(), standard_lead_names().end());
  } else {
    for (int l = 0; l < dataset.leads; ++l) lead_names.push_back("lead" + std::to_string(l + 1));
  }
  manifest << "format_version=" << kDatasetFormatVersion << '\n'
           << "N=" << dataset.size() << '\n'
           << "T=" << dataset.steps << '\n'
           << "L=" << dataset.leads << '\n'
           << "C=" << dataset.class_count << '\n'
           << "leads=" << join(lead_names) << '\n'
           << "labels=" << join(labels) << '\n';
  if (!dataset.ventricle_of_class.empty()) {
    std::vector<std::string> v;
    for (auto x : dataset.ventricle_of_class) v.push_back(to_string(x));
    manifest << "ventricles=" << join(v) << '\n';
  }
  if (!manifest) throw FormatError("failed writing manifest in " + dir.string());

  std::ofstream blob(dir / "signals.bin", std::ios::binary);
  if (!blob) throw FormatError("cannot write signals.bin in " + dir.string());
  std::vector<char> bytes;
  bytes.reserve(dataset.size() * dataset.steps * dataset.leads * 4);
  for (const auto& s : dataset.signals) {
    for (float v : s.values()) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
    }
  }
  blob.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!blob) throw FormatError("failed writing signals.bin in " + dir.string());
}

LabeledDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest");
  if (!manifest) throw FormatError("no manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("manifest is missing key '" + key + "'");
    return it->second;
  };
  const long version = parse_long("format_version", need("format_version"));
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format_version " + std::to_string(version));
  }
  LabeledDataset ds;
  const long n = parse_long("N", need("N"));
  ds.steps = static_cast<int>(parse_long("T", need("T")));
  ds.leads = static_cast<int>(parse_long("L", need("L")));
  ds.class_count = static_cast<int>(parse_long("C", need("C")));
  if (n < 0 || ds.steps <= 0 || ds.leads <= 0 || ds.class_count <= 0) {
    throw FormatError("manifest declares a non-positive dimension");
  }
  const auto lead_names = split_csv(need("leads"));
  if (static_cast<int>(lead_names.size()) != ds.leads) {
    throw FormatError("manifest lists " + std::to_string(lead_names.size()) + " leads but L=" +
                      std::to_string(ds.leads));
  }
  for (const auto& y : split_csv(need("labels"))) ds.labels.push_back(static_cast<int>(parse_long("labels", y)));
  if (static_cast<long>(ds.labels.size()) != n) {
    throw FormatError("manifest declares N=" + std::to_string(n) + " but lists " +
                      std::to_string(ds.labels.size()) + " labels");
  }
  if (auto it = kv.find("ventricles"); it != kv.end()) {
    for (const auto& v : split_csv(it->second)) ds.ventricle_of_class.push_back(parse_ventricle(v));
  }

  const std::size_t per_sample = static_cast<std::size_t>(ds.steps) * ds.leads;
  const auto expected = static_cast<std::uintmax_t>(n) * per_sample * 4;
  std::error_code ec;
  const auto actual = std::filesystem::file_size(dir / "signals.bin", ec);
  if (ec) throw FormatError("no signals.bin in " + dir.string());
  if (actual != expected) {
    throw FormatError("signals.bin holds " + std::to_string(actual) + " bytes; manifest (N=" +
                      std::to_string(n) + ", T=" + std::to_string(ds.steps) + ", L=" +
                      std::to_string(ds.leads) + ") requires " + std::to_string(expected));
  }
  std::ifstream blob(dir / "signals.bin", std::ios::binary);
  std::vector<unsigned char> bytes(expected);
  blob.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (!blob && expected > 0) throw FormatError("short read on signals.bin");

  ds.signals.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    std::vector<float> values(per_sample);
    for (std::size_t k = 0; k < per_sample; ++k) {
      const unsigned char* p = bytes.data() + (static_cast<std::size_t>(i) * per_sample + k) * 4;
      const std::uint32_t u = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                              (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
      values[k] = std::bit_cast<float>(u);
    }
    ds.signals.emplace_back(ds.steps, ds.leads, std::move(values), lead_names);
  }
  ds.validate();
  return ds;
}

}  // namespace ecgxai::signal
