#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "diag/cohort.hpp"
#include "diag/png.hpp"

namespace diag {
namespace fs = std::filesystem;
namespace {

constexpr int kCsvColumns = 6 + (kNumIndicators - 2) + 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string csv_header() {
  std::string h = "card_id,gender,age,glucose,height,weight";
  const auto& names = tabular_feature_names();
  for (int i = 2; i < kNumIndicators; ++i) h += "," + names[i];
  return h + ",label";
}

double parse_number(const std::string& cell, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": not a number '" + cell + "'");
  }
  if (pos != cell.size() || !std::isfinite(v)) throw std::runtime_error(where + ": not a finite number '" + cell + "'");
  return v;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct IndicatorRow {
  IndicatorVector indicators;
  std::optional<DiagnosisLabel> label;
};

}  // namespace

CohortDataset load_cohort(const CohortPaths& paths) {
  std::ifstream csv(paths.indicators_csv);
  if (!csv) throw std::runtime_error("cannot open indicator file " + paths.indicators_csv);

  std::vector<std::string> order;
  std::map<std::string, IndicatorRow> indicator_rows;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(csv, line)) throw std::runtime_error(paths.indicators_csv + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv_line(line).size() != kCsvColumns) {
    throw std::runtime_error(paths.indicators_csv + ":1: header must have " + std::to_string(kCsvColumns) + " columns");
  }
  while (std::getline(csv, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = paths.indicators_csv + ":" + std::to_string(line_no);
    const auto cells = split_csv_line(line);
    if (cells.size() != kCsvColumns) {
      throw std::runtime_error(where + ": row '" + (cells.empty() ? "" : cells[0]) + "' has " +
                               std::to_string(cells.size()) + " columns, expected " + std::to_string(kCsvColumns));
    }
    IndicatorRow row;
    const std::string& id = cells[0];
    if (id.empty()) throw std::runtime_error(where + ": empty card_id");
    if (cells[1] == "M") {
      row.indicators.gender = Gender::Male;
    } else if (cells[1] == "F") {
      row.indicators.gender = Gender::Female;
    } else {
      throw std::runtime_error(where + ": gender must be M or F");
    }
    row.indicators.values[0] = parse_number(cells[2], where);
    row.indicators.values[1] = parse_number(cells[3], where);
    row.indicators.height_cm = parse_number(cells[4], where);
    row.indicators.weight_kg = parse_number(cells[5], where);
    for (int i = 2; i < kNumIndicators; ++i) row.indicators.values[i] = parse_number(cells[4 + i], where);
    if (row.indicators.age() < 18.0 || row.indicators.age() > 90.0) {
      throw std::runtime_error(where + ": age outside [18, 90]");
    }
    if (!cells.back().empty()) {
      try {
        row.label = parse_label(cells.back());
      } catch (const std::exception& e) {
        throw std::runtime_error(where + ": " + e.what());
      }
    }
    if (!indicator_rows.emplace(id, std::move(row)).second) {
      throw std::runtime_error(where + ": duplicate card_id '" + id + "'");
    }
    order.push_back(id);
  }

  std::ifstream notes_file(paths.notes_jsonl);
  if (!notes_file) throw std::runtime_error("cannot open notes file " + paths.notes_jsonl);
  std::map<std::string, std::pair<std::string, std::optional<DiagnosisLabel>>> notes;
  line_no = 0;
  while (std::getline(notes_file, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = paths.notes_jsonl + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("card_id") || !j["card_id"].is_string() || !j.contains("text") ||
        !j["text"].is_string()) {
      throw std::runtime_error(where + ": expected object with string card_id and text");
    }
    std::optional<DiagnosisLabel> label;
    if (j.contains("label") && !j["label"].is_null()) {
      label = j["label"].is_number_integer() ? label_from_code(j["label"].get<int>())
                                             : parse_label(j["label"].get<std::string>());
    }
    const auto id = j["card_id"].get<std::string>();
    if (!notes.emplace(id, std::make_pair(j["text"].get<std::string>(), label)).second) {
      throw std::runtime_error(where + ": duplicate card_id '" + id + "'");
    }
  }

  CohortDataset ds;
  std::set<std::string> seen(order.begin(), order.end());
  for (const auto& [id, _] : notes) seen.insert(id);
  if (fs::is_directory(paths.images_dir)) {
    for (const auto& entry : fs::directory_iterator(paths.images_dir)) {
      if (entry.path().extension() == ".png") seen.insert(entry.path().stem().string());
    }
  }

  for (const auto& id : order) {
    const auto note_it = notes.find(id);
    const fs::path image_path = fs::path(paths.images_dir) / (id + ".png");
    if (note_it == notes.end() || !fs::exists(image_path)) continue;

    PatientRecord rec;
    rec.card_id = id;
    auto& row = indicator_rows.at(id);
    rec.indicators = row.indicators;
    rec.label = row.label;
    if (note_it->second.second && rec.label && *note_it->second.second != *rec.label) {
      throw std::runtime_error("card_id '" + id + "': note label disagrees with indicator label");
    }
    if (!rec.label) rec.label = note_it->second.second;
    try {
      rec.note = ClinicalNote(note_it->second.first);
    } catch (const std::exception& e) {
      throw std::runtime_error("card_id '" + id + "': " + e.what());
    }
    const auto img = png::read_gray(image_path.string());
    if (img.width != kImageSize || img.height != kImageSize) {
      throw std::runtime_error(image_path.string() + ": expected 64x64 image");
    }
    for (std::size_t p = 0; p < img.pixels.size(); ++p) rec.image.pixels[p] = img.pixels[p] / 255.0;
    ds.records.push_back(std::move(rec));
  }
  ds.dropped = seen.size() - ds.records.size();
  ds.provenance = nlohmann::json{{"source", "files"},
                                 {"indicators", paths.indicators_csv},
                                 {"notes", paths.notes_jsonl},
                                 {"images", paths.images_dir}}
                      .dump();
  return ds;
}

void save_cohort(const CohortDataset& dataset, const CohortPaths& paths) {
  fs::create_directories(paths.images_dir);
  std::ofstream csv(paths.indicators_csv, std::ios::binary);
  std::ofstream notes(paths.notes_jsonl, std::ios::binary);
  if (!csv || !notes) throw std::runtime_error("cannot write cohort files");
  csv << csv_header() << '\n';
  for (const auto& r : dataset.records) {
    const auto& ind = r.indicators;
    csv << r.card_id << ',' << (ind.gender == Gender::Male ? "M" : "F") << ',' << format_number(ind.values[0]) << ','
        << format_number(ind.values[1]) << ',' << format_number(ind.height_cm) << ','
        << format_number(ind.weight_kg);
    for (int i = 2; i < kNumIndicators; ++i) csv << ',' << format_number(ind.values[i]);
    csv << ',';
    if (r.label) csv << code(*r.label);
    csv << '\n';

    nlohmann::json j{{"card_id", r.card_id}, {"text", r.note.raw_text()}};
    j["label"] = r.label ? nlohmann::json(code(*r.label)) : nlohmann::json(nullptr);
    notes << j.dump() << '\n';

    const auto bytes = png::quantize(r.image.pixels);
    png::write_gray((fs::path(paths.images_dir) / (r.card_id + ".png")).string(), kImageSize, kImageSize, bytes);
  }
}

}  // namespace diag
