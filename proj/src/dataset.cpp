#include "ateavg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ateavg {

int Dataset::treated_count() const {
  return static_cast<int>((treatment.array() == 1.0).count());
}

int Dataset::control_count() const {
  return static_cast<int>((treatment.array() == 0.0).count());
}

void Dataset::validate() const {
  const int n = this->n();
  const int p = this->p();
  if (n < 2) throw ValidationError("dataset needs at least 2 rows, got " + std::to_string(n));
  if (p < 1) throw ValidationError("dataset needs at least 1 covariate column");
  if (treatment.size() != n || outcome.size() != n)
    throw ValidationError("treatment/outcome length does not match covariate rows");
  if (!column_names.empty() && static_cast<int>(column_names.size()) != p)
    throw ValidationError("column_names length does not match covariate columns");
  if (!covariates.allFinite())
    throw ValidationError("covariate matrix contains non-finite values");
  if (!outcome.allFinite())
    throw ValidationError("outcome vector contains non-finite values");
  for (int i = 0; i < n; ++i) {
    const double t = treatment[i];
    if (t != 0.0 && t != 1.0)
      throw ValidationError("treatment entry at row " + std::to_string(i + 1) +
                            " is " + std::to_string(t) + ", expected 0 or 1");
  }
  if (treated_count() == 0) throw ValidationError("treated arm is empty");
  if (control_count() == 0) throw ValidationError("control arm is empty");
}

Dataset make_dataset(Eigen::MatrixXd covariates, Eigen::VectorXd treatment,
                     Eigen::VectorXd outcome,
                     std::vector<std::string> column_names) {
  Dataset d{std::move(covariates), std::move(treatment), std::move(outcome),
            std::move(column_names)};
  if (d.column_names.empty()) {
    d.column_names.reserve(d.p());
    for (int j = 0; j < d.p(); ++j)
      d.column_names.push_back("X" + std::to_string(j + 1));
  }
  d.validate();
  return d;
}

// ----------------------------------- CSV -----------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}

double parse_cell(const std::string& cell, const std::string& path, int row,
                  const std::string& col) {
  const char* first = cell.data();
  const char* last = first + cell.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw ValidationError(path + ": row " + std::to_string(row) + ", column " +
                          col + ": non-numeric cell '" + cell + "'");
  return value;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
  const std::vector<std::string> header = split_line(line);
  if (header.size() < 3 || header[0] != "Y" || header[1] != "T")
    throw ValidationError(path + ": malformed header, expected 'Y,T,X1,...,Xp'");
  const int p = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < p; ++j) {
    if (header[j + 2] != "X" + std::to_string(j + 1))
      throw ValidationError(path + ": malformed header, column " +
                            std::to_string(j + 3) + " is '" + header[j + 2] +
                            "', expected 'X" + std::to_string(j + 1) + "'");
  }

  std::vector<double> y, t;
  std::vector<double> xflat;
  int row = 1;  // data rows are 1-based; header is row 0
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_line(line);
    if (static_cast<int>(cells.size()) != p + 2)
      throw ValidationError(path + ": row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(p + 2));
    y.push_back(parse_cell(cells[0], path, row, "Y"));
    const double tv = parse_cell(cells[1], path, row, "T");
    if (tv != 0.0 && tv != 1.0)
      throw ValidationError(path + ": row " + std::to_string(row) +
                            ": T value " + cells[1] + " outside {0,1}");
    t.push_back(tv);
    for (int j = 0; j < p; ++j)
      xflat.push_back(parse_cell(cells[j + 2], path, row, header[j + 2]));
    ++row;
  }

  const int n = static_cast<int>(y.size());
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = xflat[static_cast<std::size_t>(i) * p + j];
  std::vector<std::string> names(header.begin() + 2, header.end());
  try {
    return make_dataset(std::move(X),
                        Eigen::Map<Eigen::VectorXd>(t.data(), n),
                        Eigen::Map<Eigen::VectorXd>(y.data(), n),
                        std::move(names));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << "Y,T";
  for (int j = 0; j < d.p(); ++j) out << ",X" << (j + 1);
  out << "\n";
  char buf[64];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (int i = 0; i < d.n(); ++i) {
    put(d.outcome[i]);
    out << ',';
    out << (d.treatment[i] == 1.0 ? '1' : '0');
    for (int j = 0; j < d.p(); ++j) {
      out << ',';
      put(d.covariates(i, j));
    }
    out << "\n";
  }
  if (!out) throw ValidationError("write failed: " + path);
}

// ----------------------------- standardization ------------------------------

std::pair<Dataset, Standardization> standardize_columns(const Dataset& d) {
  const int n = d.n();
  const int p = d.p();
  Standardization rec;
  std::vector<double> means, scales;
  for (int j = 0; j < p; ++j) {
    const double m = d.covariates.col(j).mean();
    const double ss = (d.covariates.col(j).array() - m).square().sum();
    const double sd = std::sqrt(ss / (n - 1));
    if (sd > 0.0) {
      rec.kept.push_back(j);
      means.push_back(m);
      scales.push_back(sd);
    } else {
      rec.dropped.push_back(j);
    }
  }
  if (rec.kept.empty())
    throw ValidationError("all covariate columns are constant; nothing to standardize");

  const int kept = static_cast<int>(rec.kept.size());
  rec.mean = Eigen::Map<Eigen::VectorXd>(means.data(), kept);
  rec.scale = Eigen::Map<Eigen::VectorXd>(scales.data(), kept);

  Eigen::MatrixXd X(n, kept);
  std::vector<std::string> names;
  names.reserve(kept);
  for (int k = 0; k < kept; ++k) {
    const int j = rec.kept[k];
    X.col(k) = (d.covariates.col(j).array() - rec.mean[k]) / rec.scale[k];
    names.push_back(d.column_names.empty() ? "X" + std::to_string(j + 1)
                                           : d.column_names[j]);
  }
  Dataset out{std::move(X), d.treatment, d.outcome, std::move(names)};
  out.validate();
  return {std::move(out), std::move(rec)};
}

std::pair<double, Eigen::VectorXd> unstandardize_coefficients(
    const Standardization& s, double intercept,
    const Eigen::VectorXd& coefficients, int original_p) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(original_p);
  double alpha = intercept;
  for (int k = 0; k < static_cast<int>(s.kept.size()); ++k) {
    const double b = coefficients[k] / s.scale[k];
    beta[s.kept[k]] = b;
    alpha -= b * s.mean[k];
  }
  return {alpha, std::move(beta)};
}

// --------------------------------- folds ------------------------------------

namespace folds {

std::vector<int> balanced(int n, int K, rng::Philox& gen) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  gen.shuffle(order);
  std::vector<int> fold(n);
  for (int r = 0; r < n; ++r) fold[order[r]] = 1 + r % K;
  return fold;
}

std::vector<int> stratified(const std::vector<int>& cls, int K,
                            rng::Philox& gen) {
  const int n = static_cast<int>(cls.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  gen.shuffle(order);

  // The class holding unit 0 is assigned first; this makes the result a
  // function of the class partition rather than of the label values.
  const int first_class = cls[0];
  std::vector<int> fold(n);
  int rank_first = 0, count_first = 0;
  for (int i = 0; i < n; ++i)
    if (cls[i] == first_class) ++count_first;
  int rank_second = count_first % K;  // continue the round-robin
  for (int r = 0; r < n; ++r) {
    const int unit = order[r];
    if (cls[unit] == first_class)
      fold[unit] = 1 + rank_first++ % K;
    else
      fold[unit] = 1 + rank_second++ % K;
  }
  return fold;
}

}  // namespace folds

FoldAssignment assign_folds(const Dataset& d, int K, std::uint64_t seed) {
  const int n = d.n();
  if (K < 2 || K > n)
    throw ValidationError("fold count K=" + std::to_string(K) +
                          " out of range [2, n=" + std::to_string(n) + "]");
  const int n1 = d.treated_count();
  const int n0 = d.control_count();
  if (std::min(n1, n0) < K)
    throw ValidationError(
        "smaller arm has " + std::to_string(std::min(n1, n0)) +
        " units, cannot give every one of K=" + std::to_string(K) +
        " folds both arms; use a smaller K");

  std::vector<int> cls(n);
  for (int i = 0; i < n; ++i) cls[i] = d.treatment[i] == 1.0 ? 1 : 0;

  rng::Philox gen(rng::derive_key(rng::tag("fold-assignment"), seed));
  constexpr int kMaxRetries = 100;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<int> fold = folds::stratified(cls, K, gen);
    std::vector<int> treated(K, 0), control(K, 0);
    for (int i = 0; i < n; ++i)
      (cls[i] == 1 ? treated : control)[fold[i] - 1]++;
    bool ok = true;
    for (int f = 0; f < K; ++f)
      if (treated[f] == 0 || control[f] == 0) ok = false;
    if (ok) return FoldAssignment{std::move(fold), K};
  }
  throw ValidationError("could not populate every fold with both arms after " +
                        std::to_string(kMaxRetries) + " attempts; use a smaller K");
}

}  // namespace ateavg
