#include "carve/study.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/core.h>
#include <json.hpp>

#include "carve/attention.hpp"
#include "carve/contrast.hpp"
#include "carve/error.hpp"

namespace carve::study {

namespace fs = std::filesystem;

std::vector<Bin> bin_mean(std::span<const double> x, std::span<const double> y, double width) {
  if (x.size() != y.size()) {
    throw ValidationError(fmt::format("bin_mean length mismatch: {} vs {}", x.size(), y.size()));
  }
  if (!(width > 0.0)) throw ValidationError("bin width must be positive");
  const double count_f = std::round(1.0 / width);
  if (count_f < 1.0 || std::abs(count_f * width - 1.0) > 1e-9) {
    throw ValidationError(fmt::format("bin width {} does not divide 1", width));
  }
  const auto nbins = static_cast<std::size_t>(count_f);
  std::vector<Bin> bins(nbins);
  std::vector<double> sums(nbins, 0.0);
  for (std::size_t b = 0; b < nbins; ++b) bins[b].center = (static_cast<double>(b) + 0.5) * width;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 1.0)) {
      throw ValidationError(fmt::format("bin_mean x value {} outside [0, 1]", x[i]));
    }
    // x * nbins rather than x / width: 0.3 * 10 is exactly 3, 0.3 / 0.1 is not.
    auto b = static_cast<std::size_t>(std::floor(x[i] * count_f + 1e-9));
    b = std::min(b, nbins - 1);
    sums[b] += y[i];
    ++bins[b].count;
  }
  for (std::size_t b = 0; b < nbins; ++b) {
    if (bins[b].count > 0) bins[b].mean = sums[b] / static_cast<double>(bins[b].count);
  }
  return bins;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson_r length mismatch");
  if (x.size() < 2) throw ValidationError("pearson_r needs at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw ValidationError("pearson_r undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// t(0.975, df) for df = 1..200.
constexpr double kT975[200] = {
    12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912,
    2.364624, 2.306004, 2.262157, 2.228139, 2.200985, 2.178813,
    2.160369, 2.144787, 2.131450, 2.119905, 2.109816, 2.100922,
    2.093024, 2.085963, 2.079614, 2.073873, 2.068658, 2.063899,
    2.059539, 2.055529, 2.051831, 2.048407, 2.045230, 2.042272,
    2.039513, 2.036933, 2.034515, 2.032245, 2.030108, 2.028094,
    2.026192, 2.024394, 2.022691, 2.021075, 2.019541, 2.018082,
    2.016692, 2.015368, 2.014103, 2.012896, 2.011741, 2.010635,
    2.009575, 2.008559, 2.007584, 2.006647, 2.005746, 2.004879,
    2.004045, 2.003241, 2.002465, 2.001717, 2.000995, 2.000298,
    1.999624, 1.998972, 1.998341, 1.997730, 1.997138, 1.996564,
    1.996008, 1.995469, 1.994945, 1.994437, 1.993943, 1.993464,
    1.992997, 1.992543, 1.992102, 1.991673, 1.991254, 1.990847,
    1.990450, 1.990063, 1.989686, 1.989319, 1.988960, 1.988610,
    1.988268, 1.987934, 1.987608, 1.987290, 1.986979, 1.986675,
    1.986377, 1.986086, 1.985802, 1.985523, 1.985251, 1.984984,
    1.984723, 1.984467, 1.984217, 1.983972, 1.983731, 1.983495,
    1.983264, 1.983038, 1.982815, 1.982597, 1.982383, 1.982173,
    1.981967, 1.981765, 1.981567, 1.981372, 1.981180, 1.980992,
    1.980808, 1.980626, 1.980448, 1.980272, 1.980100, 1.979930,
    1.979764, 1.979600, 1.979439, 1.979280, 1.979124, 1.978971,
    1.978820, 1.978671, 1.978524, 1.978380, 1.978239, 1.978099,
    1.977961, 1.977826, 1.977692, 1.977561, 1.977431, 1.977304,
    1.977178, 1.977054, 1.976931, 1.976811, 1.976692, 1.976575,
    1.976460, 1.976346, 1.976233, 1.976122, 1.976013, 1.975905,
    1.975799, 1.975694, 1.975590, 1.975488, 1.975387, 1.975288,
    1.975189, 1.975092, 1.974996, 1.974902, 1.974808, 1.974716,
    1.974625, 1.974535, 1.974446, 1.974358, 1.974271, 1.974185,
    1.974100, 1.974017, 1.973934, 1.973852, 1.973771, 1.973691,
    1.973612, 1.973534, 1.973457, 1.973381, 1.973305, 1.973231,
    1.973157, 1.973084, 1.973012, 1.972941, 1.972870, 1.972800,
    1.972731, 1.972663, 1.972595, 1.972528, 1.972462, 1.972396,
    1.972332, 1.972268, 1.972204, 1.972141, 1.972079, 1.972017,
    1.971957, 1.971896
};

}  // namespace

double t_quantile_975(int df) {
  if (df < 1) throw ValidationError("degrees of freedom must be at least 1");
  if (df <= 200) return kT975[df - 1];
  constexpr double z = 1.959963984540054;
  const double d = static_cast<double>(df);
  return z + (z * z * z + z) / (4.0 * d) +
         (5.0 * std::pow(z, 5) + 16.0 * z * z * z + 3.0 * z) / (96.0 * d * d);
}

Interval confidence_interval(std::span<const double> samples, double level) {
  if (std::abs(level - 0.95) > 1e-12) {
    throw ValidationError(fmt::format("confidence level {} unsupported (only 0.95)", level));
  }
  if (samples.size() < 2) throw ValidationError("confidence interval needs at least two samples");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return Interval{mean, t_quantile_975(static_cast<int>(samples.size()) - 1) * s / std::sqrt(n)};
}

// ---------------------------------------------------------------------------
// Corpus runner

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct Inputs {
  fs::path image;
  fs::path q_dump;
  fs::path g_dump;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError(ParseErrorKind::BadCsv, "unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::map<std::string, int> read_labels(const fs::path& path, std::vector<std::string>& warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto lines = csv_lines(ss.str());
  std::map<std::string, int> labels;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (i == 0 && !f.empty() && f[0] == "id") continue;
    if (f.size() != 2 || (f[1] != "0" && f[1] != "1")) {
      warnings.push_back(fmt::format("labels.csv line {} ignored", i + 1));
      continue;
    }
    labels[f[0]] = f[1] == "1" ? 1 : 0;
  }
  return labels;
}

SampleRecord analyse(const std::string& id, const Inputs& in, const StudyConfig& cfg) {
  SampleRecord rec;
  rec.id = id;
  const auto image = imaging::read_image(in.image);
  rec.texture_complexity = imaging::texture_complexity(imaging::canny_edges(image, cfg.canny));
  rec.color_complexity = imaging::color_complexity(image, cfg.exclude_achromatic);

  const auto q = attention::read_dump_file(in.q_dump).stack;
  const int step = q.t_end();
  rec.overall_entropy = attention::overall_entropy(q, cfg.layer_start, cfg.layer_end, step);
  const double max_entropy = std::log(static_cast<double>(q.token_count()));
  rec.normalized_entropy =
      max_entropy > 0.0 ? std::clamp(rec.overall_entropy / max_entropy, 0.0, 1.0) : 0.0;
  for (int l = cfg.layer_start; l <= cfg.layer_end; ++l) {
    rec.layer_entropies.push_back(attention::map_entropy(q.map(l, step)));
  }

  if (!in.g_dump.empty()) {
    const auto g = attention::read_dump_file(in.g_dump).stack;
    const int gstep = std::min(step, g.t_end());
    double sum = 0.0;
    for (int l = cfg.layer_start; l <= cfg.layer_end; ++l) {
      const auto refined = contrast::contrast_refine(q.map(l, step), g.map(l, gstep),
                                                     contrast::ContrastConfig{cfg.lambda});
      sum += attention::shannon_entropy(attention::normalize(refined));
    }
    rec.contrasted_entropy = sum / static_cast<double>(cfg.layer_end - cfg.layer_start + 1);
  }
  return rec;
}

}  // namespace

StudyResult run_study(const fs::path& dir, const StudyConfig& cfg) {
  if (cfg.layer_start > cfg.layer_end) throw ValidationError("empty layer range");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());

  StudyResult result;
  std::map<std::string, Inputs> inputs;
  std::set<std::string> q_only;
  std::set<std::string> g_only;
  bool have_labels = false;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    const std::string lname = lower(name);
    if (ends_with(lname, ".q.catt")) {
      inputs[name.substr(0, name.size() - 7)].q_dump = entry.path();
    } else if (ends_with(lname, ".g.catt")) {
      inputs[name.substr(0, name.size() - 7)].g_dump = entry.path();
    } else if (lname == "labels.csv") {
      have_labels = true;
    } else {
      const std::string ext = lower(entry.path().extension().string());
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
        inputs[entry.path().stem().string()].image = entry.path();
      }
    }
  }

  std::vector<std::pair<std::string, Inputs>> work;
  for (const auto& [id, in] : inputs) {
    if (in.image.empty()) {
      result.errors.push_back(fmt::format("{}: orphan dump (no image)", id));
    } else if (in.q_dump.empty()) {
      result.errors.push_back(fmt::format("{}: orphan image (no question dump)", id));
    } else {
      work.emplace_back(id, in);
    }
  }
  if (work.empty()) result.warnings.push_back("no complete samples found in " + dir.string());

  std::vector<std::optional<SampleRecord>> slots(work.size());
  std::vector<std::string> failures(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      try {
        slots[i] = analyse(work[i].first, work[i].second, cfg);
      } catch (const std::exception& e) {
        failures[i] = fmt::format("{}: {}", work[i].first, e.what());
      }
    }
  };
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, work.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < work.size(); ++i) {
    if (slots[i]) {
      result.records.push_back(std::move(*slots[i]));
    } else {
      result.errors.push_back(failures[i]);
    }
  }

  if (have_labels) {
    const auto labels = read_labels(dir / "labels.csv", result.warnings);
    for (auto& rec : result.records) {
      if (auto it = labels.find(rec.id); it != labels.end()) rec.correct = it->second;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Outputs

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ParseError(ParseErrorKind::BadCsv, "not a number: '" + s + "'");
  }
  return v;
}

constexpr const char* kRawHeader =
    "id,texture_complexity,color_complexity,overall_entropy,normalized_entropy,"
    "contrasted_entropy,correct,layer_entropies";

}  // namespace

std::string raw_csv(std::span<const SampleRecord> records) {
  std::string out = std::string(kRawHeader) + "\n";
  for (const auto& r : records) {
    std::string layers;
    for (std::size_t i = 0; i < r.layer_entropies.size(); ++i) {
      if (i) layers += ';';
      layers += num(r.layer_entropies[i]);
    }
    out += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(r.id), num(r.texture_complexity),
                       num(r.color_complexity), num(r.overall_entropy), num(r.normalized_entropy),
                       r.contrasted_entropy ? num(*r.contrasted_entropy) : std::string(),
                       r.correct ? std::to_string(*r.correct) : std::string(), layers);
  }
  return out;
}

std::vector<SampleRecord> parse_raw_csv(const std::string& text) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines[0] != kRawHeader) {
    throw ParseError(ParseErrorKind::BadCsv, "missing raw.csv header");
  }
  std::vector<SampleRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 8) {
      throw ParseError(ParseErrorKind::BadCsv, fmt::format("line {} has {} fields", i + 1, f.size()));
    }
    SampleRecord r;
    r.id = f[0];
    r.texture_complexity = parse_double(f[1]);
    r.color_complexity = parse_double(f[2]);
    r.overall_entropy = parse_double(f[3]);
    r.normalized_entropy = parse_double(f[4]);
    if (!f[5].empty()) r.contrasted_entropy = parse_double(f[5]);
    if (!f[6].empty()) r.correct = static_cast<int>(parse_double(f[6]));
    std::stringstream ls(f[7]);
    std::string item;
    while (std::getline(ls, item, ';')) r.layer_entropies.push_back(parse_double(item));
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<double> column(std::span<const SampleRecord> records, double SampleRecord::*field) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.*field);
  return out;
}

nlohmann::json maybe_pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2) return nullptr;
  try {
    return pearson_r(x, y);
  } catch (const ValidationError&) {
    return nullptr;
  }
}

}  // namespace

std::string binned_csv(std::span<const SampleRecord> records, double width) {
  std::string out = "metric,bin_center,mean,count\n";
  const auto entropy = column(records, &SampleRecord::normalized_entropy);
  auto emit = [&](const char* metric, const std::vector<Bin>& bins) {
    for (const auto& b : bins) out += fmt::format("{},{:.4f},{},{}\n", metric, b.center, num(b.mean), b.count);
  };
  emit("texture_vs_entropy", bin_mean(column(records, &SampleRecord::texture_complexity), entropy, width));
  emit("color_vs_entropy", bin_mean(column(records, &SampleRecord::color_complexity), entropy, width));

  std::vector<double> ex;
  std::vector<double> acc;
  for (const auto& r : records) {
    if (!r.correct) continue;
    ex.push_back(r.normalized_entropy);
    acc.push_back(*r.correct);
  }
  if (!ex.empty()) emit("accuracy_vs_entropy", bin_mean(ex, acc, width));
  return out;
}

std::string stats_json(const StudyResult& result, const StudyConfig& cfg) {
  using nlohmann::json;
  const auto& recs = result.records;
  const auto entropy = column(recs, &SampleRecord::normalized_entropy);
  json j{
      {"n_samples", recs.size()},
      {"layer_range", json::array({cfg.layer_start, cfg.layer_end})},
      {"entropy_normalization", "ln N_v"},
      {"pearson_r",
       json{{"texture_vs_entropy", maybe_pearson(column(recs, &SampleRecord::texture_complexity), entropy)},
            {"color_vs_entropy", maybe_pearson(column(recs, &SampleRecord::color_complexity), entropy)}}},
      {"errors", result.errors},
      {"warnings", result.warnings},
  };

  // Entropy by outcome, and accuracy per entropy bin with t-intervals.
  std::vector<double> right;
  std::vector<double> wrong;
  std::vector<double> ex;
  std::vector<double> acc;
  for (const auto& r : recs) {
    if (!r.correct) continue;
    (*r.correct ? right : wrong).push_back(r.normalized_entropy);
    ex.push_back(r.normalized_entropy);
    acc.push_back(*r.correct);
  }
  if (!ex.empty()) {
    auto ci = [](const std::vector<double>& v) -> json {
      if (v.size() < 2) return nullptr;
      const auto i = confidence_interval(v);
      return json{{"mean", i.mean}, {"half_width", i.half_width}, {"n", v.size()}};
    };
    json bins = json::array();
    const double w = cfg.bin_width;
    const auto nb = static_cast<std::size_t>(std::round(1.0 / w));
    std::vector<std::vector<double>> members(nb);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const auto b = std::min(nb - 1, static_cast<std::size_t>(std::floor(ex[i] * nb + 1e-9)));
      members[b].push_back(acc[i]);
    }
    for (std::size_t b = 0; b < nb; ++b) {
      if (members[b].empty()) continue;
      double mean = 0.0;
      for (double v : members[b]) mean += v;
      mean /= static_cast<double>(members[b].size());
      bins.push_back(json{{"center", (static_cast<double>(b) + 0.5) * w},
                          {"accuracy", mean},
                          {"count", members[b].size()},
                          {"ci", ci(members[b])}});
    }
    j["outcomes"] = json{{"entropy_correct", ci(right)},
                         {"entropy_incorrect", ci(wrong)},
                         {"accuracy_by_entropy", bins}};
  }
  return j.dump(2);
}

std::string plot_svg(std::span<const SampleRecord> records, double width) {
  constexpr int kPanel = 360;
  constexpr int kPad = 50;
  const auto entropy = column(records, &SampleRecord::normalized_entropy);
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      2 * (kPanel + 2 * kPad), kPanel + 2 * kPad);

  auto panel = [&](int ox, const char* label, const std::vector<double>& x) {
    auto px = [&](double v) { return ox + kPad + v * kPanel; };
    auto py = [&](double v) { return kPad + (1.0 - v) * kPanel; };
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                       ox + kPad, kPad, kPanel, kPanel);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", ox + kPad + kPanel / 2,
                       kPad + kPanel + 32, label);
    svg += fmt::format(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">normalized attention "
        "entropy</text>\n",
        ox + 18, kPad + kPanel / 2, ox + 18, kPad + kPanel / 2);
    for (int t = 0; t <= 10; t += 5) {
      svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.1f}</text>\n", px(t / 10.0),
                         kPad + kPanel + 16, t / 10.0);
      svg += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n", ox + kPad - 4,
                         py(t / 10.0) + 4, t / 10.0);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n",
                         px(x[i]), py(entropy[i]));
    }
    std::string points;
    for (const auto& b : bin_mean(x, entropy, width)) {
      if (b.count == 0) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(b.center), py(b.mean));
    }
    if (!points.empty()) {
      points.pop_back();
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"2\"/>\n",
                         points);
    }
  };
  panel(0, "texture complexity", column(records, &SampleRecord::texture_complexity));
  panel(kPanel + 2 * kPad, "color complexity", column(records, &SampleRecord::color_complexity));
  svg += "</svg>\n";
  return svg;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_outputs(const StudyResult& result, const StudyConfig& cfg, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "raw.csv", raw_csv(result.records));
  write_text(out_dir / "binned.csv", binned_csv(result.records, cfg.bin_width));
  write_text(out_dir / "stats.json", stats_json(result, cfg));
  if (!result.records.empty()) write_text(out_dir / "plot.svg", plot_svg(result.records, cfg.bin_width));
}

}  // namespace carve::study
