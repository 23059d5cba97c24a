#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tercast/csv.hpp"
#include "tercast/error.hpp"
#include "tercast/features.hpp"

namespace tercast {

enum class RegMode { lasso, en_fixed, en_opt };

inline std::string to_string(RegMode m) {
    switch (m) {
        case RegMode::lasso: return "lasso";
        case RegMode::en_fixed: return "en_fixed";
        case RegMode::en_opt: return "en_opt";
    }
    return "?";
}

inline RegMode parse_reg_mode(const std::string& s) {
    if (s == "lasso") return RegMode::lasso;
    if (s == "en_fixed") return RegMode::en_fixed;
    if (s == "en_opt") return RegMode::en_opt;
    throw config_error("unknown regularization mode '" + s + "'");
}

struct HyperParams {
    double lambda1 = 0.0;  // row-group l21 weight
    double lambda2 = 0.0;  // Frobenius (ridge) weight
};

/// Solver constants; fixed here and echoed into run metadata.
struct FitOptions {
    double tol = 1e-8;        // max row change, relative to 1 + ||B||_F
    int max_sweeps = 10000;
    double kkt_tol = 1e-6;    // subgradient optimality certificate
};

struct FitDiagnostics {
    int sweeps = 0;
    double kkt_residual = 0.0;
};

/// g(B) = ||A - XB||_F^2 + lambda2 ||B||_F^2 + lambda1 ||B||_21
inline double mtnet_objective(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B, double lambda1, double lambda2) {
    double obj = (A - X * B).squaredNorm() + lambda2 * B.squaredNorm();
    for (Eigen::Index j = 0; j < B.rows(); ++j) obj += lambda1 * B.row(j).norm();
    return obj;
}

/// Smallest lambda1 for which the all-zero matrix minimizes the objective:
/// max_j 2 ||X_j' A||_2.
inline double lambda_max(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A) {
    double lm = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        lm = std::max(lm, 2.0 * (X.col(j).transpose() * A).norm());
    return lm;
}

/// Block-coordinate descent over the rows of B with the group soft-threshold
/// update B_j <- R_j * max(0, 1 - (lambda1/2)/||R_j||) / (||X_j||^2 + lambda2),
/// where R_j = X_j'(A - XB + X_j B_j). Convergence is certified against the
/// subgradient conditions of the objective.
inline Eigen::MatrixXd fit_mtnet(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A,
                                 double lambda1, double lambda2,
                                 const FitOptions& opts = FitOptions{},
                                 const Eigen::MatrixXd* warm_start = nullptr,
                                 FitDiagnostics* diag = nullptr) {
    const Eigen::Index n = X.rows(), d = X.cols(), k = A.cols();
    if (n < 2) throw validation_error("fit_mtnet: need at least 2 samples");
    if (A.rows() != n) throw validation_error("fit_mtnet: X and A row counts differ");
    if (!X.allFinite() || !A.allFinite())
        throw validation_error("fit_mtnet: non-finite input");
    if (lambda1 < 0 || lambda2 < 0) throw validation_error("fit_mtnet: negative penalty");

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d, k);
    if (warm_start) {
        if (warm_start->rows() != d || warm_start->cols() != k)
            throw validation_error("fit_mtnet: warm start shape mismatch");
        B = *warm_start;
    }
    Eigen::VectorXd col_norm2(d);
    for (Eigen::Index j = 0; j < d; ++j) col_norm2[j] = X.col(j).squaredNorm();

    Eigen::MatrixXd R = A - X * B;  // maintained residual
#ifndef NDEBUG
    double prev_obj = mtnet_objective(X, A, B, lambda1, lambda2);
#endif
    int sweeps = 0;
    for (; sweeps < opts.max_sweeps; ++sweeps) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double denom = col_norm2[j] + lambda2;
            Eigen::RowVectorXd rj = X.col(j).transpose() * R + col_norm2[j] * B.row(j);
            Eigen::RowVectorXd bj_new;
            if (denom <= 0.0) {
                bj_new = Eigen::RowVectorXd::Zero(k);
            } else {
                const double norm = rj.norm();
                const double shrink = norm > 0.0 ? std::max(0.0, 1.0 - (lambda1 / 2.0) / norm) : 0.0;
                bj_new = rj * (shrink / denom);
            }
            const Eigen::RowVectorXd delta = bj_new - B.row(j);
            const double change = delta.norm();
            if (change > 0.0) {
                R.noalias() -= X.col(j) * delta;
                B.row(j) = bj_new;
                max_change = std::max(max_change, change);
            }
        }
#ifndef NDEBUG
        const double obj = mtnet_objective(X, A, B, lambda1, lambda2);
        assert(obj <= prev_obj + 1e-9 * (1.0 + std::abs(prev_obj)));
        prev_obj = obj;
#endif
        if (max_change < opts.tol * (1.0 + B.norm())) { ++sweeps; break; }
    }

    // subgradient optimality: for active rows the smooth gradient plus the
    // penalty direction must vanish; for zero rows its norm must stay below
    // lambda1
    R = A - X * B;
    double kkt = 0.0;
    const double scale = 1.0 + lambda_max(X, A);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Eigen::RowVectorXd grad = -2.0 * (X.col(j).transpose() * R) + 2.0 * lambda2 * B.row(j);
        const double bnorm = B.row(j).norm();
        if (bnorm > 0.0)
            kkt = std::max(kkt, (grad + lambda1 * B.row(j) / bnorm).norm());
        else
            kkt = std::max(kkt, std::max(0.0, grad.norm() - lambda1));
    }
    if (diag) {
        diag->sweeps = sweeps;
        diag->kkt_residual = kkt;
    }
    if (kkt > opts.kkt_tol * scale)
        throw convergence_error("fit_mtnet: solver did not certify optimality (residual " +
                                    csv::format_double(kkt) + ")",
                                kkt);
    return B;
}

// ---------------------------------------------------------------------------
// Hyper-parameter selection
// ---------------------------------------------------------------------------

struct LambdaGridSpec {
    int n_lambda1 = 30;
    double floor_ratio = 1e-3;                       // smallest lambda1 / lambda_max
    double en_fixed_ratio = 1.0;                     // lambda2 = ratio * lambda1
    std::vector<double> en_opt_ratios{0.0, 0.1, 1.0, 10.0};
};

struct CvEntry {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double cv_mse = 0.0;
};

struct CvResult {
    HyperParams selected;
    std::vector<CvEntry> table;
};

/// Training years sorted ascending, indexed j from 0, are assigned
/// fold(j) = floor((j mod 10) / 2): consecutive-year pairs, stepping through
/// the record in strides of 10 so every decade appears in each of 5 folds.
inline std::vector<int> cv_fold_assignment(const std::vector<int>& training_years) {
    std::vector<int> sorted(training_years);
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> fold(training_years.size());
    for (size_t i = 0; i < training_years.size(); ++i) {
        const auto it = std::find(sorted.begin(), sorted.end(), training_years[i]);
        const size_t j = size_t(it - sorted.begin());
        fold[i] = static_cast<int>((j % 10) / 2);
    }
    return fold;
}

/// Structured 5-fold cross-validation over the lambda grid. The lambda1 path
/// descends from lambda_max(X, A) to floor_ratio * lambda_max in n_lambda1
/// log-spaced steps; fits along the path are warm-started. Ties in the mean
/// validation error break toward larger lambda1, then larger lambda2.
inline CvResult cv_select(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A, RegMode mode,
                          const LambdaGridSpec& grid, const std::vector<int>& training_years,
                          const FitOptions& opts = FitOptions{}) {
    if (training_years.size() < 10)
        throw config_error("cv_select: need at least 10 training years");
    if (Eigen::Index(training_years.size()) != X.rows())
        throw validation_error("cv_select: year list does not match X rows");

    const std::vector<int> fold = cv_fold_assignment(training_years);
    const int n_folds = 5;
    const double lmax = lambda_max(X, A);

    std::vector<double> lambda1s;
    for (int i = 0; i < grid.n_lambda1; ++i)
        lambda1s.push_back(lmax * std::pow(grid.floor_ratio,
                                           double(i) / double(grid.n_lambda1 - 1)));

    std::vector<double> ratios;
    switch (mode) {
        case RegMode::lasso: ratios = {0.0}; break;
        case RegMode::en_fixed: ratios = {grid.en_fixed_ratio}; break;
        case RegMode::en_opt: ratios = grid.en_opt_ratios; break;
    }

    // pre-split fold views
    std::vector<Eigen::MatrixXd> X_tr(n_folds), A_tr(n_folds), X_va(n_folds), A_va(n_folds);
    for (int f = 0; f < n_folds; ++f) {
        std::vector<int> tr, va;
        for (size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? va : tr).push_back(int(i));
        X_tr[f].resize(tr.size(), X.cols());
        A_tr[f].resize(tr.size(), A.cols());
        X_va[f].resize(va.size(), X.cols());
        A_va[f].resize(va.size(), A.cols());
        for (size_t i = 0; i < tr.size(); ++i) {
            X_tr[f].row(i) = X.row(tr[i]);
            A_tr[f].row(i) = A.row(tr[i]);
        }
        for (size_t i = 0; i < va.size(); ++i) {
            X_va[f].row(i) = X.row(va[i]);
            A_va[f].row(i) = A.row(va[i]);
        }
    }

    CvResult result;
    bool have_best = false;
    double best_mse = 0.0;
    for (double ratio : ratios) {
        std::vector<Eigen::MatrixXd> warm(n_folds);
        for (double l1 : lambda1s) {
            const double l2 = ratio * l1;
            double mse_sum = 0.0;
            for (int f = 0; f < n_folds; ++f) {
                const Eigen::MatrixXd* ws = warm[f].size() ? &warm[f] : nullptr;
                Eigen::MatrixXd B = fit_mtnet(X_tr[f], A_tr[f], l1, l2, opts, ws);
                warm[f] = B;
                const Eigen::MatrixXd err = A_va[f] - X_va[f] * B;
                mse_sum += err.squaredNorm() / double(err.rows() * err.cols());
            }
            const CvEntry entry{l1, l2, mse_sum / n_folds};
            result.table.push_back(entry);
            const bool tie_wins =
                have_best && entry.cv_mse == best_mse &&
                (entry.lambda1 > result.selected.lambda1 ||
                 (entry.lambda1 == result.selected.lambda1 &&
                  entry.lambda2 > result.selected.lambda2));
            if (!have_best || entry.cv_mse < best_mse || tie_wins) {
                result.selected = {entry.lambda1, entry.lambda2};
                best_mse = entry.cv_mse;
                have_best = true;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Degrees of freedom and forecast-error covariance
// ---------------------------------------------------------------------------

/// Active rows of a coefficient matrix (nonzero group norm).
inline std::vector<int> active_rows(const Eigen::MatrixXd& B) {
    std::vector<int> act;
    for (Eigen::Index j = 0; j < B.rows(); ++j)
        if (B.row(j).norm() > 0.0) act.push_back(int(j));
    return act;
}

/// df = tr(X_A (X_A' X_A + lambda2 I)^-1 X_A') computed through the
/// eigenvalues of X_A' X_A: sum_i d_i / (d_i + lambda2). For lambda2 = 0 this
/// is the rank of the active design, which equals the active-row count when
/// the design has full column rank.
inline double estimate_df(const Eigen::MatrixXd& X, const Eigen::MatrixXd& B, double lambda2,
                          bool* rank_deficient = nullptr) {
    if (rank_deficient) *rank_deficient = false;
    const std::vector<int> act = active_rows(B);
    if (act.empty()) return 0.0;
    Eigen::MatrixXd Xa(X.rows(), act.size());
    for (size_t i = 0; i < act.size(); ++i) Xa.col(i) = X.col(act[i]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Xa.transpose() * Xa);
    const Eigen::VectorXd d = eig.eigenvalues();
    const double dmax = d.maxCoeff();
    const double rank_tol = dmax * double(std::max(X.rows(), Eigen::Index(act.size()))) * 1e-12;
    double df = 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double di = std::max(0.0, d[i]);
        if (di <= rank_tol) continue;
        ++rank;
        df += lambda2 > 0.0 ? di / (di + lambda2) : 1.0;
    }
    if (rank < int(act.size()) && rank_deficient) *rank_deficient = true;
    return df;
}

/// Sigma_a = (1/(n - df)) sum_t e_t e_t'. When n <= df the denominator falls
/// back to max(1, n - df) and the caller is warned.
inline Eigen::MatrixXd estimate_loading_covariance(const Eigen::MatrixXd& residuals, double df,
                                                   bool* fallback = nullptr) {
    const double n = double(residuals.rows());
    if (fallback) *fallback = n <= df;
    const double denom = n > df ? n - df : std::max(1.0, n - df);
    Eigen::MatrixXd sigma = residuals.transpose() * residuals / denom;
    sigma = ((sigma + sigma.transpose()) / 2.0).eval();  // exact symmetry
    return sigma;
}

// ---------------------------------------------------------------------------
// Packaged fit
// ---------------------------------------------------------------------------

struct MultiTaskFit {
    Eigen::MatrixXd B;                  // d x k, on the standardized feature scale
    HyperParams params;
    RegMode mode = RegMode::lasso;
    std::vector<int> active;            // active row indices
    double df = 0.0;
    Eigen::MatrixXd sigma_a;            // k x k loading-error covariance
    std::vector<CvEntry> cv_table;
    std::vector<int> training_years;
    FitDiagnostics diag;
    bool rank_deficient_df = false;
    bool covariance_fallback = false;

    // feature roster and scaling carried over from the FeatureTable
    std::vector<std::string> feature_names;
    std::vector<double> col_mean, col_sd;
};

/// Cross-validates, refits on the full training sample, and packages the
/// degrees of freedom and residual covariance.
inline MultiTaskFit fit_multitask(const FeatureTable& features, const Eigen::MatrixXd& A,
                                  RegMode mode, const LambdaGridSpec& grid = LambdaGridSpec{},
                                  const FitOptions& opts = FitOptions{}) {
    const Eigen::MatrixXd X = features.training_matrix();
    if (A.rows() != X.rows())
        throw validation_error("fit_multitask: loadings do not match training years");

    MultiTaskFit fit;
    fit.mode = mode;
    fit.training_years = features.training_years;
    fit.feature_names = features.names;
    fit.col_mean = features.col_mean;
    fit.col_sd = features.col_sd;

    CvResult cv = cv_select(X, A, mode, grid, features.training_years, opts);
    fit.params = cv.selected;
    fit.cv_table = cv.table;
    fit.B = fit_mtnet(X, A, fit.params.lambda1, fit.params.lambda2, opts, nullptr, &fit.diag);
    fit.active = active_rows(fit.B);
    fit.df = estimate_df(X, fit.B, fit.params.lambda2, &fit.rank_deficient_df);
    const Eigen::MatrixXd residuals = A - X * fit.B;
    fit.sigma_a = estimate_loading_covariance(residuals, fit.df, &fit.covariance_fallback);
    return fit;
}

/// mu = B' x with the stored training scaling applied to the raw vector.
inline Eigen::VectorXd predict_loadings(const MultiTaskFit& fit, const Eigen::VectorXd& raw_x) {
    if (raw_x.size() != Eigen::Index(fit.feature_names.size()))
        throw validation_error("predict_loadings: feature roster mismatch");
    if (!raw_x.allFinite())
        throw validation_error("predict_loadings: non-finite feature value");
    Eigen::VectorXd x(raw_x.size());
    for (Eigen::Index j = 0; j < raw_x.size(); ++j)
        x[j] = (raw_x[j] - fit.col_mean[j]) / fit.col_sd[j];
    return fit.B.transpose() * x;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_fit_report(const MultiTaskFit& fit, const std::string& path) {
    auto out = csv::open_out(path);
    out << "feature,eof_index,coefficient_scaled,coefficient_raw\n";
    for (Eigen::Index j = 0; j < fit.B.rows(); ++j)
        for (Eigen::Index i = 0; i < fit.B.cols(); ++i)
            out << fit.feature_names[j] << ',' << (i + 1) << ','
                << csv::format_double(fit.B(j, i)) << ','
                << csv::format_double(fit.B(j, i) / fit.col_sd[j]) << '\n';
}

inline void save_selection_report(const std::vector<CvEntry>& table, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lambda1,lambda2,cv_mse\n";
    for (const auto& e : table)
        out << csv::format_double(e.lambda1) << ',' << csv::format_double(e.lambda2) << ','
            << csv::format_double(e.cv_mse) << '\n';
}

inline void save_fit_metadata(const MultiTaskFit& fit, const std::string& path) {
    auto out = csv::open_out(path);
    out << "mode=" << to_string(fit.mode) << "\n";
    out << "lambda1=" << csv::format_double(fit.params.lambda1) << "\n";
    out << "lambda2=" << csv::format_double(fit.params.lambda2) << "\n";
    out << "df=" << csv::format_double(fit.df) << "\n";
    out << "active_rows=" << fit.active.size() << "\n";
    out << "sweeps=" << fit.diag.sweeps << "\n";
    out << "kkt_residual=" << csv::format_double(fit.diag.kkt_residual) << "\n";
    out << "rank_deficient_df=" << (fit.rank_deficient_df ? 1 : 0) << "\n";
    out << "covariance_fallback=" << (fit.covariance_fallback ? 1 : 0) << "\n";
}

}  // namespace tercast
