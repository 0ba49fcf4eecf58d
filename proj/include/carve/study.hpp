#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carve/imaging.hpp"

namespace carve::study {

struct SampleRecord {
  std::string id;
  double texture_complexity = 0.0;
  double color_complexity = 0.0;
  double overall_entropy = 0.0;     // nats
  double normalized_entropy = 0.0;  // overall / ln N_v
  std::vector<double> layer_entropies;
  std::optional<double> contrasted_entropy;  // when a general dump is present
  std::optional<int> correct;                // from labels.csv

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Bin {
  double center = 0.0;
  double mean = 0.0;  // 0 when count == 0
  std::size_t count = 0;
};

/// Averages y within [k*w, (k+1)*w); the last bin is closed at 1.
std::vector<Bin> bin_mean(std::span<const double> x, std::span<const double> y, double width = 0.1);

double pearson_r(std::span<const double> x, std::span<const double> y);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// Two-sided 0.975 Student-t quantile: tabulated for df <= 200, a
/// Cornish-Fisher expansion of the normal quantile beyond.
double t_quantile_975(int df);

/// mean +/- t(0.975, n-1) * s / sqrt(n). Only level 0.95 is supported.
Interval confidence_interval(std::span<const double> samples, double level = 0.95);

struct StudyConfig {
  int layer_start = 20;
  int layer_end = 25;
  imaging::CannyParams canny{};
  bool exclude_achromatic = false;
  double lambda = 0.05;
  double bin_width = 0.1;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct StudyResult {
  std::vector<SampleRecord> records;  // sorted by id
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

/// Scans `<id>.png|jpg|jpeg`, `<id>.q.catt`, optional `<id>.g.catt` and an
/// optional labels.csv. Problems with single samples are collected in
/// `errors`; the run continues.
StudyResult run_study(const std::filesystem::path& dir, const StudyConfig& cfg);

std::string raw_csv(std::span<const SampleRecord> records);
std::vector<SampleRecord> parse_raw_csv(const std::string& text);

std::string stats_json(const StudyResult& result, const StudyConfig& cfg);
std::string binned_csv(std::span<const SampleRecord> records, double width);
std::string plot_svg(std::span<const SampleRecord> records, double width);

/// Writes raw.csv, binned.csv, stats.json and, when there is at least one
/// record, plot.svg.
void write_outputs(const StudyResult& result, const StudyConfig& cfg,
                   const std::filesystem::path& out_dir);

}  // namespace carve::study
