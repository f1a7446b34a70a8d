#include "srot/measures.hpp"

#include "srot/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace srot {

namespace {

constexpr double kWeightSumTolerance = 1e-12;
constexpr double kBarycenterTolerance = 1e-6;

bool coincide(const Point& a, const Point& b) {
    return (a.coords - b.coords).cwiseAbs().maxCoeff() <= kMergeTolerance;
}

Box hull(const std::vector<Atom>& atoms) {
    Box box{atoms.front().point.coords, atoms.front().point.coords};
    for (const auto& a : atoms) {
        box.lower = box.lower.cwiseMin(a.point.coords);
        box.upper = box.upper.cwiseMax(a.point.coords);
    }
    return box;
}

std::string strip_comment(const std::string& line) {
    const auto hash = line.find('#');
    return hash == std::string::npos ? line : line.substr(0, hash);
}

std::vector<std::string> tokens(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw InputError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    return v;
}

std::size_t parse_index(const std::string& s, std::size_t line_no) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw InputError("line " + std::to_string(line_no) + ": bad index '" + s + "'");
    }
    return v;
}

// Reads non-blank, comment-stripped lines, keeping line numbers.
std::vector<std::pair<std::size_t, std::vector<std::string>>> content_lines(std::istream& in) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        auto t = tokens(strip_comment(line));
        if (!t.empty()) out.emplace_back(no, std::move(t));
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

bool Box::contains(const Point& p) const {
    return (p.coords.array() >= lower.array()).all() && (p.coords.array() <= upper.array()).all();
}

DiscreteMeasure::DiscreteMeasure(std::vector<Atom> atoms)
    : DiscreteMeasure(atoms, atoms.empty() ? Box{} : hull(atoms)) {}

DiscreteMeasure::DiscreteMeasure(std::vector<Atom> atoms, Box box) : atoms_(std::move(atoms)), box_(std::move(box)) {
    if (atoms_.empty()) throw InputError("measure has no atoms");
    dim_ = atoms_.front().point.dim();
    double total = 0.0;
    for (const auto& a : atoms_) {
        if (a.point.dim() != dim_) throw InputError("measure atoms have inconsistent dimensions");
        if (!a.point.finite()) throw InputError("measure atom has non-finite coordinates");
        if (!(a.weight > 0.0) || !std::isfinite(a.weight)) throw InputError("measure weights must be positive");
        total += a.weight;
    }
    if (std::abs(total - 1.0) > kWeightSumTolerance) {
        throw InputError("measure weights sum to " + format_double(total) + ", not 1");
    }
    if (box_.lower.size() != dim_ || box_.upper.size() != dim_) {
        throw InputError("bounding box dimension does not match the atoms");
    }
    for (const auto& a : atoms_) {
        if (!box_.contains(a.point)) throw InputError("measure atom outside its bounding box");
    }
}

std::size_t DiscreteMeasure::find(const Point& p) const {
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        if (p.dim() == dim_ && coincide(atoms_[i].point, p)) return i;
    }
    return npos;
}

DiscreteMeasure uniform_measure(const std::vector<Point>& points) {
    std::vector<Atom> atoms;
    const double w = 1.0 / static_cast<double>(points.size());
    for (const auto& p : points) atoms.push_back({p, w});
    return DiscreteMeasure(std::move(atoms));
}

std::vector<double> Plan::row_sums() const {
    std::vector<double> s(rows, 0.0);
    for (const auto& e : entries) s.at(e.i) += e.weight;
    return s;
}

std::vector<double> Plan::col_sums() const {
    std::vector<double> s(cols, 0.0);
    for (const auto& e : entries) s.at(e.j) += e.weight;
    return s;
}

Plan Plan::normalized() const {
    std::map<std::pair<std::size_t, std::size_t>, double> acc;
    for (const auto& e : entries) acc[{e.i, e.j}] += e.weight;
    Plan out{rows, cols, {}};
    for (const auto& [key, w] : acc) {
        if (w != 0.0) out.entries.push_back({key.first, key.second, w});
    }
    return out;
}

double marginal_violation(const Plan& plan, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    const auto r = plan.row_sums();
    const auto c = plan.col_sums();
    double worst = 0.0;
    for (std::size_t i = 0; i < mu0.size(); ++i) worst = std::max(worst, std::abs(r[i] - mu0[i].weight));
    for (std::size_t j = 0; j < mu1.size(); ++j) worst = std::max(worst, std::abs(c[j] - mu1[j].weight));
    return worst;
}

void check_admissible(const Plan& plan, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1, double tol) {
    if (plan.rows != mu0.size() || plan.cols != mu1.size()) {
        throw InputError("plan shape " + std::to_string(plan.rows) + "x" + std::to_string(plan.cols) +
                         " does not match measures " + std::to_string(mu0.size()) + "x" +
                         std::to_string(mu1.size()));
    }
    for (const auto& e : plan.entries) {
        if (e.i >= plan.rows || e.j >= plan.cols) throw InputError("plan index out of range");
        if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) throw InputError("plan weight must be >= 0");
    }
    const double v = marginal_violation(plan, mu0, mu1);
    if (v > tol) throw InputError("plan marginals off by " + format_double(v));
}

SampledCurve SampledCurve::from_path(const GeodesicPath& path) {
    SampledCurve c;
    c.times.reserve(path.samples.size());
    c.points.reserve(path.samples.size());
    c.velocities.reserve(path.samples.size());
    for (const auto& s : path.samples) {
        c.times.push_back(s.t);
        c.points.push_back(s.point);
        c.velocities.push_back(s.velocity);
    }
    return c;
}

GeneralizedCurve GeneralizedCurve::dirac(SampledCurve c) {
    GeneralizedCurve g;
    g.laws.reserve(c.size());
    for (const auto& v : c.velocities) g.laws.push_back({{v, 1.0}});
    g.curve = std::move(c);
    return g;
}

Vector GeneralizedCurve::barycenter(std::size_t k) const {
    Vector mean = Vector::Zero(curve.velocities[k].frame_coeffs.size());
    for (const auto& a : laws[k]) mean += a.probability * a.v.frame_coeffs;
    return mean;
}

double GeneralizedCurve::second_moment(std::size_t k) const {
    double s = 0.0;
    for (const auto& a : laws[k]) s += a.probability * a.v.squared_norm();
    return s;
}

TransportMeasure::TransportMeasure(std::vector<WeightedCurve> curves) : curves_(std::move(curves)) {
    if (curves_.empty()) throw InputError("transport measure has no curves");
    times_ = curves_.front().curve.curve.times;
    if (times_.size() < 2) throw InputError("transport measure needs at least two sample times");
    const std::size_t steps = times_.size() - 1;
    for (std::size_t k = 0; k <= steps; ++k) {
        const double expected = static_cast<double>(k) / static_cast<double>(steps);
        if (std::abs(times_[k] - expected) > 1e-14) throw InputError("time grid is not uniform on [0,1]");
    }
    const int dim = curves_.front().curve.curve.points.front().dim();

    double total = 0.0;
    for (std::size_t c = 0; c < curves_.size(); ++c) {
        const auto& wc = curves_[c];
        const auto& g = wc.curve;
        if (!(wc.weight > 0.0) || !std::isfinite(wc.weight)) throw InputError("curve weights must be positive");
        total += wc.weight;
        if (g.curve.times != times_) throw InputError("curves do not share the time grid");
        if (g.curve.points.size() != times_.size() || g.curve.velocities.size() != times_.size() ||
            g.laws.size() != times_.size()) {
            throw InputError("curve " + std::to_string(c) + " has inconsistent sample counts");
        }
        for (std::size_t k = 0; k < times_.size(); ++k) {
            if (g.curve.points[k].dim() != dim) throw InputError("curve points have inconsistent dimensions");
            if (g.laws[k].empty()) throw InputError("empty velocity law");
            double mass = 0.0;
            for (const auto& a : g.laws[k]) {
                if (!(a.probability >= 0.0)) throw InputError("negative velocity probability");
                if (a.v.frame_coeffs.size() != g.curve.velocities[k].frame_coeffs.size()) {
                    throw InputError("velocity law has the wrong horizontal rank");
                }
                mass += a.probability;
            }
            if (std::abs(mass - 1.0) > kWeightSumTolerance) {
                throw InputError("velocity law probabilities do not sum to 1");
            }
            const double gap = (g.barycenter(k) - g.curve.velocities[k].frame_coeffs).cwiseAbs().maxCoeff();
            if (gap > kBarycenterTolerance) {
                throw InputError("velocity law barycenter differs from the curve velocity by " + format_double(gap));
            }
        }
    }
    if (std::abs(total - 1.0) > kWeightSumTolerance) {
        throw InputError("curve weights sum to " + format_double(total) + ", not 1");
    }
}

int TransportMeasure::dim() const { return curves_.front().curve.curve.points.front().dim(); }

DiscreteMeasure marginal_path(const TransportMeasure& eta, std::size_t t_index) {
    if (t_index > eta.steps()) throw InputError("time index outside the grid");
    std::vector<Atom> atoms;
    for (const auto& wc : eta.curves()) {
        const Point& p = wc.curve.curve.points[t_index];
        auto it = std::find_if(atoms.begin(), atoms.end(), [&](const Atom& a) { return coincide(a.point, p); });
        if (it == atoms.end()) {
            atoms.push_back({p, wc.weight});
        } else {
            it->weight += wc.weight;
        }
    }
    return DiscreteMeasure(std::move(atoms));
}

std::vector<FieldSample> averaged_field(const TransportMeasure& eta, std::size_t t_index) {
    if (t_index > eta.steps()) throw InputError("time index outside the grid");
    struct Acc {
        Point point;
        Vector momentum;
        double weight;
    };
    std::vector<Acc> acc;
    for (const auto& wc : eta.curves()) {
        const Point& p = wc.curve.curve.points[t_index];
        const Vector contribution = wc.weight * wc.curve.barycenter(t_index);
        auto it = std::find_if(acc.begin(), acc.end(), [&](const Acc& a) { return coincide(a.point, p); });
        if (it == acc.end()) {
            acc.push_back({p, contribution, wc.weight});
        } else {
            it->momentum += contribution;
            it->weight += wc.weight;
        }
    }
    std::vector<FieldSample> out;
    out.reserve(acc.size());
    for (auto& a : acc) out.push_back({a.point, {a.point, a.momentum / a.weight}, a.weight});
    return out;
}

std::vector<YoungSample> flatten(const TransportMeasure& eta) {
    std::vector<YoungSample> out;
    for (const auto& wc : eta.curves()) {
        const auto& g = wc.curve;
        for (std::size_t k = 0; k < g.laws.size(); ++k) {
            for (const auto& a : g.laws[k]) out.push_back({k, g.curve.points[k], a.v, wc.weight * a.probability});
        }
    }
    return out;
}

DiscreteMeasure read_measure(std::istream& in) {
    const auto lines = content_lines(in);
    if (lines.empty()) throw InputError("measure file is empty");
    const auto& [hno, head] = lines.front();
    if (head.size() != 3 || head[0] != "srot-measure" || head[1] != "v1" || head[2].rfind("dim=", 0) != 0) {
        throw InputError("line " + std::to_string(hno) + ": expected header 'srot-measure v1 dim=n'");
    }
    const std::size_t dim = parse_index(head[2].substr(4), hno);
    if (dim < 1 || dim > static_cast<std::size_t>(kMaxChartDim)) {
        throw InputError("line " + std::to_string(hno) + ": unsupported dimension");
    }
    std::vector<Atom> atoms;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto& [no, t] = lines[l];
        if (t.size() != dim + 1) {
            throw InputError("line " + std::to_string(no) + ": expected weight and " + std::to_string(dim) +
                             " coordinates");
        }
        Vector c(static_cast<Eigen::Index>(dim));
        for (std::size_t d = 0; d < dim; ++d) c[static_cast<Eigen::Index>(d)] = parse_double(t[d + 1], no);
        atoms.push_back({Point(c), parse_double(t[0], no)});
    }
    return DiscreteMeasure(std::move(atoms));
}

DiscreteMeasure read_measure(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return read_measure(in);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_measure(std::ostream& out, const DiscreteMeasure& mu) {
    out << "srot-measure v1 dim=" << mu.dim() << '\n';
    for (const auto& a : mu.atoms()) {
        out << format_double(a.weight);
        for (int d = 0; d < mu.dim(); ++d) out << ' ' << format_double(a.point[d]);
        out << '\n';
    }
}

void write_measure(const std::filesystem::path& path, const DiscreteMeasure& mu) {
    auto out = open_out(path);
    write_measure(out, mu);
}

Plan read_plan(std::istream& in) {
    const auto lines = content_lines(in);
    if (lines.empty()) throw InputError("plan file is empty");
    const auto& [hno, head] = lines.front();
    if (head.size() != 2 || head[0] != "srot-plan" || head[1] != "v1") {
        throw InputError("line " + std::to_string(hno) + ": expected header 'srot-plan v1'");
    }
    Plan plan;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto& [no, t] = lines[l];
        if (t.size() != 3) throw InputError("line " + std::to_string(no) + ": expected 'i j w'");
        PlanEntry e{parse_index(t[0], no), parse_index(t[1], no), parse_double(t[2], no)};
        if (e.weight < 0.0) throw InputError("line " + std::to_string(no) + ": negative plan weight");
        plan.rows = std::max(plan.rows, e.i + 1);
        plan.cols = std::max(plan.cols, e.j + 1);
        plan.entries.push_back(e);
    }
    return plan;
}

Plan read_plan(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return read_plan(in);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_plan(std::ostream& out, const Plan& plan) {
    out << "srot-plan v1\n";
    for (const auto& e : plan.entries) out << e.i << ' ' << e.j << ' ' << format_double(e.weight) << '\n';
}

void write_plan(const std::filesystem::path& path, const Plan& plan) {
    auto out = open_out(path);
    write_plan(out, plan);
}

void write_transport_summary(std::ostream& out, const TransportMeasure& eta) {
    const std::size_t steps = eta.steps();
    const double h = 1.0 / static_cast<double>(steps);
    out << "srot-transport v1\n";
    out << "curves = " << eta.curves().size() << '\n';
    out << "steps = " << steps << '\n';
    for (std::size_t c = 0; c < eta.curves().size(); ++c) {
        const auto& wc = eta.curves()[c];
        double energy = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) {
            energy += (k == 0 || k == steps ? 0.5 : 1.0) * h * wc.curve.second_moment(k);
        }
        auto coords = [](const Point& p) {
            std::string s;
            for (int d = 0; d < p.dim(); ++d) s += (d ? "," : "") + format_double(p[d]);
            return s;
        };
        out << "curve." << c << ".weight = " << format_double(wc.weight) << '\n';
        out << "curve." << c << ".energy = " << format_double(energy) << '\n';
        out << "curve." << c << ".start = " << coords(wc.curve.curve.points.front()) << '\n';
        out << "curve." << c << ".end = " << coords(wc.curve.curve.points.back()) << '\n';
    }
}

}  // namespace srot
