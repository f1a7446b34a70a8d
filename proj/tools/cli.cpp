#include "cli.hpp"

#include "srot/errors.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace srot::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
    T v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && text[0] == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty()) {
        throw InputError(what + ": cannot parse '" + text + "' as a number");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) throw InputError(what + ": value must be finite");
    }
    return v;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename Get>
Setter int_key(Get get) {
    return [get](RunConfig& c, const std::string& v, const std::string& what) { get(c) = parse_number<int>(v, what); };
}

template <typename Get>
Setter real_key(Get get) {
    return [get](RunConfig& c, const std::string& v, const std::string& what) {
        get(c) = parse_number<double>(v, what);
    };
}

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> keys = {
        {"manifold.name",
         [](RunConfig& c, const std::string& v, const std::string& what) {
             if (v != "heisenberg" && v != "euclidean") {
                 throw InputError(what + ": expected heisenberg or euclidean, got '" + v + "'");
             }
             c.manifold = v;
         }},
        {"manifold.dim", int_key([](RunConfig& c) -> int& { return c.dim; })},
        {"shooting.steps", int_key([](RunConfig& c) -> int& { return c.shooting.steps; })},
        {"shooting.angular", int_key([](RunConfig& c) -> int& { return c.shooting.angular; })},
        {"shooting.radial", int_key([](RunConfig& c) -> int& { return c.shooting.radial; })},
        {"shooting.vertical", int_key([](RunConfig& c) -> int& { return c.shooting.vertical; })},
        {"shooting.vertical_span", real_key([](RunConfig& c) -> double& { return c.shooting.vertical_span; })},
        {"shooting.screen_steps", int_key([](RunConfig& c) -> int& { return c.shooting.screen_steps; })},
        {"shooting.refine_seeds", int_key([](RunConfig& c) -> int& { return c.shooting.refine_seeds; })},
        {"shooting.max_iterations", int_key([](RunConfig& c) -> int& { return c.shooting.max_iterations; })},
        {"shooting.bvp_tol", real_key([](RunConfig& c) -> double& { return c.shooting.bvp_tol; })},
        {"shooting.energy_tol", real_key([](RunConfig& c) -> double& { return c.shooting.energy_tol; })},
        {"shooting.fd_step", real_key([](RunConfig& c) -> double& { return c.shooting.fd_step; })},
        {"shooting.chart_bound", real_key([](RunConfig& c) -> double& { return c.shooting.chart_bound; })},
        {"solver.kind",
         [](RunConfig& c, const std::string& v, const std::string& what) {
             if (v == "exact") {
                 c.solver = SolverKind::exact;
             } else if (v == "entropic") {
                 c.solver = SolverKind::entropic;
             } else {
                 throw InputError(what + ": expected exact or entropic, got '" + v + "'");
             }
         }},
        {"solver.epsilon", real_key([](RunConfig& c) -> double& { return c.entropic.epsilon; })},
        {"solver.epsilon_start", real_key([](RunConfig& c) -> double& { return c.entropic.epsilon_start; })},
        {"solver.anneal_factor", real_key([](RunConfig& c) -> double& { return c.entropic.anneal_factor; })},
        {"solver.max_iter", int_key([](RunConfig& c) -> int& { return c.entropic.max_iter; })},
        {"solver.tolerance", real_key([](RunConfig& c) -> double& { return c.entropic.tolerance; })},
        {"tolerances.equivalence", real_key([](RunConfig& c) -> double& { return c.tolerances.equivalence; })},
        {"tolerances.extracted_lower", real_key([](RunConfig& c) -> double& { return c.tolerances.extracted_lower; })},
        {"tolerances.extracted_upper", real_key([](RunConfig& c) -> double& { return c.tolerances.extracted_upper; })},
        {"tolerances.jensen", real_key([](RunConfig& c) -> double& { return c.tolerances.jensen; })},
        {"tolerances.interior", real_key([](RunConfig& c) -> double& { return c.tolerances.interior; })},
        {"tolerances.closed", real_key([](RunConfig& c) -> double& { return c.tolerances.closed; })},
        {"tolerances.tighten", real_key([](RunConfig& c) -> double& { return c.tolerances.tighten; })},
        {"tolerances.dual_gap", real_key([](RunConfig& c) -> double& { return c.tolerances.dual_gap; })},
        {"tolerances.marginal", real_key([](RunConfig& c) -> double& { return c.tolerances.marginal; })},
        {"run.seed",
         [](RunConfig& c, const std::string& v, const std::string& what) {
             c.seed = parse_number<std::uint64_t>(v, what);
         }},
        {"run.threads", int_key([](RunConfig& c) -> int& { return c.shooting.threads; })},
    };
    return keys;
}

Point parse_point(const std::string& text, const std::string& what) {
    std::vector<double> coords;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) coords.push_back(parse_number<double>(trim(item), what));
    if (coords.empty() || coords.size() > static_cast<std::size_t>(kMaxChartDim)) {
        throw InputError(what + ": expected 1 to " + std::to_string(kMaxChartDim) + " comma-separated coordinates");
    }
    return Point(Eigen::Map<const Eigen::VectorXd>(coords.data(), static_cast<Eigen::Index>(coords.size())));
}

std::string join(const Vector& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) s += ',';
        s += format_double(v[i]);
    }
    return s;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void check_dims(const Manifold& m, const DiscreteMeasure& mu, const std::string& what) {
    if (mu.dim() != m.chart_dim()) {
        throw InputError(what + " has dimension " + std::to_string(mu.dim()) + " but the manifold chart has " +
                         std::to_string(m.chart_dim()));
    }
}

std::ofstream open_output(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    return f;
}

KantorovichSolution solve(const RunConfig& cfg, const CostMatrix& costs, const DiscreteMeasure& mu0,
                          const DiscreteMeasure& mu1) {
    if (cfg.solver == SolverKind::entropic) return solve_entropic(costs, mu0, mu1, cfg.entropic);
    return solve_exact(costs, mu0, mu1);
}

// Replaces the plan by the product coupling, which is admissible but in
// general not optimal.
Plan product_plan(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    Plan p{mu0.size(), mu1.size(), {}};
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        for (std::size_t j = 0; j < mu1.size(); ++j) p.entries.push_back({i, j, mu0[i].weight * mu1[j].weight});
    }
    return p;
}

int selftest(std::ostream& out) {
    struct Case {
        std::string name;
        std::function<bool()> body;
    };
    const ShootingConfig cfg;
    const std::vector<Case> cases = {
        {"euclidean_distance", [&] { return std::abs(distance(euclidean(2), {0, 0}, {3, 4}, cfg) - 5.0) <= 1e-8; }},
        {"heisenberg_horizontal_segment",
         [&] { return std::abs(distance(heisenberg(), {0, 0, 0}, {1, 0, 0}, cfg) - 1.0) <= 1e-6; }},
        {"constant_path", [&] { return distance(heisenberg(), {0.3, 0.1, 0.2}, {0.3, 0.1, 0.2}, cfg) == 0.0; }},
        {"two_point_matching",
         [&] {
             const Manifold m = euclidean(1);
             const auto mu0 = uniform_measure({Point{0.0}, Point{1.0}});
             const auto mu1 = uniform_measure({Point{1.0}, Point{0.0}});
             const auto sol = solve_exact(cost_matrix(m, mu0, mu1, cfg), mu0, mu1);
             return sol.cost == 0.0 && sol.dual_gap <= 1e-9;
         }},
        {"delta_equivalence",
         [&] {
             const Manifold m = heisenberg();
             const DiscreteMeasure mu0({{Point{0, 0, 0}, 1.0}});
             const DiscreteMeasure mu1({{Point{1, 0, 0}, 1.0}});
             VerifyConfig vc;
             vc.shooting = cfg;
             return verify_equivalence(m, mu0, mu1, vc).passed();
         }},
    };
    bool all = true;
    for (const auto& c : cases) {
        bool ok = false;
        try {
            ok = c.body();
        } catch (const Error&) {
            ok = false;
        }
        all = all && ok;
        out << (ok ? "PASS " : "FAIL ") << c.name << '\n';
    }
    return all ? kPass : kAssertionFailure;
}

}  // namespace

Manifold RunConfig::make_manifold() const {
    if (manifold == "euclidean") return euclidean(dim);
    return heisenberg();
}

void RunConfig::validate() const {
    shooting.validate();
    if (manifold == "euclidean" && (dim < 1 || dim > kMaxChartDim)) {
        throw InputError("manifold.dim must be between 1 and " + std::to_string(kMaxChartDim));
    }
    if (manifold == "heisenberg" && dim != 3) throw InputError("manifold.dim must be 3 for heisenberg");
    if (!(entropic.epsilon > 0.0) || !(entropic.epsilon_start >= entropic.epsilon)) {
        throw InputError("solver.epsilon must be positive and not above solver.epsilon_start");
    }
    if (!(entropic.anneal_factor > 0.0 && entropic.anneal_factor < 1.0)) {
        throw InputError("solver.anneal_factor must lie in (0, 1)");
    }
    if (entropic.max_iter < 1) throw InputError("solver.max_iter must be positive");
    if (!(entropic.tolerance > 0.0)) throw InputError("solver.tolerance must be positive");
    const std::pair<const char*, double> tols[] = {
        {"equivalence", tolerances.equivalence}, {"extracted_lower", tolerances.extracted_lower},
        {"extracted_upper", tolerances.extracted_upper}, {"jensen", tolerances.jensen},
        {"interior", tolerances.interior}, {"closed", tolerances.closed},
        {"tighten", tolerances.tighten}, {"dual_gap", tolerances.dual_gap},
        {"marginal", tolerances.marginal},
    };
    for (const auto& [name, value] : tols) {
        if (!(value > 0.0)) throw InputError(std::string("tolerances.") + name + " must be positive");
    }
}

RunConfig parse_run_config(std::istream& in) {
    static const std::set<std::string> sections = {"manifold", "shooting", "solver", "tolerances", "run"};
    RunConfig cfg;
    std::set<std::string> seen;
    std::string section;
    std::string raw;
    for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
        const auto hash = raw.find_first_of("#;");
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        const std::string where = "config line " + std::to_string(line_no);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw InputError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) throw InputError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError(where + ": expected key = value");
        if (section.empty()) throw InputError(where + ": key outside of any section");
        const std::string key = section + "." + trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = schema().find(key);
        if (it == schema().end()) throw InputError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw InputError(where + ": duplicate key '" + key + "'");
        it->second(cfg, value, where + " (" + key + ")");
    }
    if (cfg.manifold == "euclidean" && !seen.count("manifold.dim")) {
        throw InputError("config: euclidean manifold requires manifold.dim");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config '" + path.string() + "'");
    return parse_run_config(f);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sub-Riemannian optimal transport: Kantorovich and Benamou-Brenier formulations"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 0;
    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--threads", threads, "cap on worker threads (overrides run.threads)")->check(CLI::PositiveNumber);
    std::string manifold;
    int dim = 0;
    app.add_option("--manifold", manifold, "heisenberg or euclidean (overrides manifold.name)")
        ->check(CLI::IsMember({"heisenberg", "euclidean"}));
    app.add_option("--dim", dim, "euclidean chart dimension (overrides manifold.dim)");

    std::string from, to, mu0_path, mu1_path, plan_path, out_path;
    bool corrupt = false;
    bool no_timestamp = false;

    auto* distance_cmd = app.add_subcommand("distance", "sub-Riemannian distance and initial covector");
    distance_cmd->add_option("--from", from, "comma-separated chart coordinates")->required();
    distance_cmd->add_option("--to", to, "comma-separated chart coordinates")->required();

    auto* solve_cmd = app.add_subcommand("solve", "optimal plan between two measure files");
    solve_cmd->add_option("--mu0", mu0_path)->required();
    solve_cmd->add_option("--mu1", mu1_path)->required();
    solve_cmd->add_option("--out", out_path, "plan file to write")->required();

    auto* build_cmd = app.add_subcommand("build-bb", "transport measure built from a plan");
    build_cmd->add_option("--mu0", mu0_path)->required();
    build_cmd->add_option("--mu1", mu1_path)->required();
    build_cmd->add_option("--plan", plan_path, "plan file; the optimal plan when omitted");
    build_cmd->add_option("--out", out_path, "transport summary to write")->required();

    auto* verify_cmd = app.add_subcommand("verify", "end-to-end equivalence check");
    verify_cmd->add_option("--mu0", mu0_path)->required();
    verify_cmd->add_option("--mu1", mu1_path)->required();
    verify_cmd->add_option("--out", out_path, "report file to write")->required();
    verify_cmd->add_flag("--debug-corrupt-plan", corrupt, "replace the optimal plan by the product coupling");
    verify_cmd->add_flag("--no-timestamp", no_timestamp, "omit the generated line");

    auto* emit_cmd = app.add_subcommand("emit-curves", "sampled geodesics of a plan");
    emit_cmd->add_option("--mu0", mu0_path)->required();
    emit_cmd->add_option("--mu1", mu1_path)->required();
    emit_cmd->add_option("--plan", plan_path)->required();
    emit_cmd->add_option("--out", out_path)->required();

    auto* selftest_cmd = app.add_subcommand("selftest", "built-in smoke checks");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kPass;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (threads > 0) cfg.shooting.threads = threads;
        if (!manifold.empty()) {
            cfg.manifold = manifold;
            cfg.dim = manifold == "heisenberg" ? 3 : (dim > 0 ? dim : cfg.dim);
        } else if (dim > 0) {
            cfg.dim = dim;
        }
        cfg.validate();
        const Manifold m = cfg.make_manifold();

        if (selftest_cmd->parsed()) return selftest(out);

        if (distance_cmd->parsed()) {
            const Point x = parse_point(from, "--from");
            const Point y = parse_point(to, "--to");
            m.check_point(x);
            m.check_point(y);
            const GeodesicPath path = connect(m, x, y, cfg.shooting);
            out << "distance = " << format_double(std::sqrt(path.energy)) << '\n';
            out << "energy = " << format_double(path.energy) << '\n';
            out << "lambda0 = " << join(path.initial.momenta) << '\n';
            out << "endpoint_residual = " << format_double(path.endpoint_residual) << '\n';
            if (x == y) out << "note = constant path\n";
            return kPass;
        }

        const DiscreteMeasure mu0 = read_measure(mu0_path);
        const DiscreteMeasure mu1 = read_measure(mu1_path);
        check_dims(m, mu0, "--mu0");
        check_dims(m, mu1, "--mu1");

        if (solve_cmd->parsed()) {
            const CostMatrix costs = cost_matrix(m, mu0, mu1, cfg.shooting);
            const KantorovichSolution sol = solve(cfg, costs, mu0, mu1);
            write_plan(out_path, sol.plan);
            out << "cost = " << format_double(sol.cost) << '\n';
            out << "solver = " << (sol.solver == SolverKind::exact ? "exact" : "entropic") << '\n';
            if (sol.solver == SolverKind::exact) {
                out << "dual_gap = " << format_double(sol.dual_gap) << '\n';
            } else {
                out << "epsilon = " << format_double(sol.epsilon) << '\n';
            }
            out << "entries = " << sol.plan.entries.size() << '\n';
            return kPass;
        }

        if (build_cmd->parsed()) {
            Plan plan;
            if (plan_path.empty()) {
                plan = solve(cfg, cost_matrix(m, mu0, mu1, cfg.shooting), mu0, mu1).plan;
            } else {
                plan = read_plan(plan_path);
            }
            const TransportMeasure eta = build_from_plan(m, plan, mu0, mu1, cfg.shooting);
            auto f = open_output(out_path);
            write_transport_summary(f, eta);
            out << "relaxed_cost = " << format_double(relaxed_cost(eta)) << '\n';
            out << "pair_cost = " << format_double(pair_cost(eta)) << '\n';
            out << "curves = " << eta.curves().size() << '\n';
            return kPass;
        }

        if (verify_cmd->parsed()) {
            VerifyConfig vc;
            vc.shooting = cfg.shooting;
            vc.tolerances = cfg.tolerances;
            if (corrupt) vc.plan_override = [&](const Plan&) { return product_plan(mu0, mu1); };
            const EquivalenceReport report = verify_equivalence(m, mu0, mu1, vc);
            {
                auto f = open_output(out_path);
                write_report(f, report, m.name(),
                             no_timestamp ? std::nullopt : std::optional<std::string>(utc_timestamp()));
            }
            out << "result = " << (report.passed() ? "PASS" : "FAIL") << '\n';
            for (const auto& name : report.failures()) out << "failed = " << name << '\n';
            return report.passed() ? kPass : kAssertionFailure;
        }

        if (emit_cmd->parsed()) {
            const Plan plan = read_plan(plan_path);
            check_admissible(plan, mu0, mu1);
            auto f = open_output(out_path);
            f << "srot-curves v1 dim=" << m.chart_dim() << " rank=" << m.horizontal_rank()
              << " steps=" << cfg.shooting.steps << " entries=" << plan.entries.size() << '\n';
            f << "# entry i j weight t";
            for (int d = 0; d < m.chart_dim(); ++d) f << " x" << d + 1;
            for (int d = 0; d < m.horizontal_rank(); ++d) f << " v" << d + 1;
            f << '\n';
            for (std::size_t e = 0; e < plan.entries.size(); ++e) {
                const auto& pe = plan.entries[e];
                const GeodesicPath path = connect(m, mu0[pe.i].point, mu1[pe.j].point, cfg.shooting);
                for (const auto& s : path.samples) {
                    f << e << ' ' << pe.i << ' ' << pe.j << ' ' << format_double(pe.weight) << ' '
                      << format_double(s.t);
                    for (int d = 0; d < s.point.dim(); ++d) f << ' ' << format_double(s.point[d]);
                    for (Eigen::Index d = 0; d < s.velocity.frame_coeffs.size(); ++d) {
                        f << ' ' << format_double(s.velocity.frame_coeffs[d]);
                    }
                    f << '\n';
                }
            }
            out << "rows = " << plan.entries.size() * static_cast<std::size_t>(cfg.shooting.steps + 1) << '\n';
            return kPass;
        }
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const ConnectionFailure& e) {
        err << "numerical failure: " << e.what() << " (best residual " << format_double(e.best_residual()) << ")\n";
        return kNumericalFailure;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalFailure;
    }
    return kInputError;
}

}  // namespace srot::cli
