#ifndef QMARKET_IO_HPP
#define QMARKET_IO_HPP

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "market.hpp"
#include "operators.hpp"
#include "perturbation.hpp"
#include "propagator.hpp"
#include "semiclassical.hpp"

// Configuration and price ingestion, command dispatch and deterministic
// result emission (CSV tables + JSON manifest).

namespace qmarket {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimeGridSpec {
    double t_start = 0.0;
    double t_end = -1.0;  // negative: run to M*h
    int n_points = 21;
};

struct CommandSpec {
    std::string name;  // basis | evolve | transition | portfolio | semiclassical | compare
    std::optional<BasisState> final_state;
    std::optional<int> trader;
    std::optional<double> time;
    std::optional<int> dump_hamiltonian;  // interval index, basis command only
    std::vector<int> orders = {1};
    bool include_exact = true;
    std::optional<int> portfolio_order;  // nullopt: exact
    TimeGridSpec grid;
};

struct RunSpec {
    MarketConfig config;
    SectorKey sector;
    BasisState initial;
    PriceTrajectory trajectory;
    CommandSpec command;
    nlohmann::json document;  // canonical echo of the parsed input
};

struct ResultTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct ResultRecord {
    nlohmann::json command_echo;
    std::string inputs_digest;
    double validity = 0.0;  // lambda * max|h| * t
    nlohmann::json extra_diagnostics = nlohmann::json::object();
    std::vector<ResultTable> tables;
    std::vector<std::pair<std::string, std::string>> extra_files;
    double elapsed_ms = 0.0;  // never serialized: result files must be byte-stable

    nlohmann::json manifest() const {
        nlohmann::json m;
        m["command"] = command_echo;
        m["inputs_digest"] = inputs_digest;
        m["diagnostics"] = {{"validity_lambda_h_t", validity}};
        for (const auto& [key, value] : extra_diagnostics.items()) m["diagnostics"][key] = value;
        nlohmann::json tl = nlohmann::json::array();
        for (const auto& t : tables)
            tl.push_back({{"name", t.name},
                          {"file", t.name + ".csv"},
                          {"columns", t.columns},
                          {"rows", t.rows.size()}});
        m["tables"] = tl;
        nlohmann::json xf = nlohmann::json::array();
        for (const auto& [name, content] : extra_files) {
            (void)content;
            xf.push_back(name);
        }
        m["extra_files"] = xf;
        return m;
    }
};

namespace detail {

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) throw ParseError(std::string("missing field \"") + field + "\"");
    return *it;
}

inline int require_int(const nlohmann::json& j, const char* field) {
    const auto& v = require_field(j, field);
    if (!v.is_number_integer())
        throw ValidationError(std::string("field \"") + field + "\" must be an integer");
    return v.get<int>();
}

inline double require_number(const nlohmann::json& j, const char* field) {
    const auto& v = require_field(j, field);
    if (!v.is_number())
        throw ValidationError(std::string("field \"") + field + "\" must be a number");
    return v.get<double>();
}

inline std::vector<int> parse_int_row(const nlohmann::json& v, const char* what) {
    if (!v.is_array()) throw ValidationError(std::string(what) + " must be an array");
    std::vector<int> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        if (!e.is_number_integer())
            throw ValidationError(std::string(what) + " entries must be integers");
        out.push_back(e.get<int>());
    }
    return out;
}

inline BasisState parse_state(const nlohmann::json& j, int traders, int share_types,
                              const char* what) {
    const auto& sh = require_field(j, "shares");
    const auto& ca = require_field(j, "cash");
    if (!sh.is_array() || static_cast<int>(sh.size()) != traders)
        throw ValidationError(std::string(what) + ".shares must have one row per trader");
    BasisState s;
    s.shares.reserve(static_cast<std::size_t>(traders) * share_types);
    for (const auto& row : sh) {
        std::vector<int> r = parse_int_row(row, (std::string(what) + ".shares row").c_str());
        if (static_cast<int>(r.size()) != share_types)
            throw ValidationError(std::string(what) + ".shares rows must have share_types entries");
        for (int v : r) {
            if (v < 0) throw ValidationError(std::string(what) + ".shares must be nonnegative");
            s.shares.push_back(v);
        }
    }
    s.cash = parse_int_row(ca, (std::string(what) + ".cash").c_str());
    if (static_cast<int>(s.cash.size()) != traders)
        throw ValidationError(std::string(what) + ".cash must have one entry per trader");
    for (int v : s.cash)
        if (v < 0) throw ValidationError(std::string(what) + ".cash must be nonnegative");
    return s;
}

}  // namespace detail

inline RunSpec parse_run_spec(const nlohmann::json& doc) {
    using detail::require_field;
    using detail::require_int;
    using detail::require_number;

    RunSpec spec;
    spec.document = doc;
    const int n = require_int(doc, "traders");
    const int l = require_int(doc, "share_types");
    if (n < 1 || l < 1) throw ValidationError("traders and share_types must be positive");

    MarketConfig cfg(n, l);
    cfg.lambda = require_number(doc, "lambda");
    const auto& ws = require_field(doc, "omega_share");
    if (!ws.is_array() || static_cast<int>(ws.size()) != n)
        throw ValidationError("omega_share must have one row per trader");
    for (int j = 0; j < n; ++j) {
        const auto& row = ws[static_cast<std::size_t>(j)];
        if (!row.is_array() || static_cast<int>(row.size()) != l)
            throw ValidationError("omega_share rows must have share_types entries");
        for (int a = 0; a < l; ++a) {
            if (!row[static_cast<std::size_t>(a)].is_number())
                throw ValidationError("omega_share entries must be numbers");
            cfg.set_omega_share(j, a, row[static_cast<std::size_t>(a)].get<double>());
        }
    }
    const auto& wc = require_field(doc, "omega_cash");
    if (!wc.is_array() || static_cast<int>(wc.size()) != n)
        throw ValidationError("omega_cash must have one entry per trader");
    for (int j = 0; j < n; ++j) {
        if (!wc[static_cast<std::size_t>(j)].is_number())
            throw ValidationError("omega_cash entries must be numbers");
        cfg.set_omega_cash(j, wc[static_cast<std::size_t>(j)].get<double>());
    }
    const auto& cp = require_field(doc, "coupling");
    if (!cp.is_array() || static_cast<int>(cp.size()) != n)
        throw ValidationError("coupling must be an N x N x L array");
    for (int i = 0; i < n; ++i) {
        const auto& row = cp[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != n)
            throw ValidationError("coupling must be an N x N x L array");
        for (int j = 0; j < n; ++j) {
            const auto& cell = row[static_cast<std::size_t>(j)];
            if (!cell.is_array() || static_cast<int>(cell.size()) != l)
                throw ValidationError("coupling must be an N x N x L array");
            for (int a = 0; a < l; ++a) {
                if (!cell[static_cast<std::size_t>(a)].is_number())
                    throw ValidationError("coupling entries must be numbers");
                cfg.set_coupling_raw(i, j, a, cell[static_cast<std::size_t>(a)].get<double>());
            }
        }
    }
    validate_config(cfg);
    spec.config = cfg;

    const auto& sec = require_field(doc, "sector");
    spec.sector.total_shares = detail::parse_int_row(require_field(sec, "shares"), "sector.shares");
    if (static_cast<int>(spec.sector.total_shares.size()) != l)
        throw ValidationError("sector.shares must have share_types entries");
    spec.sector.total_cash = require_int(sec, "cash");
    for (int v : spec.sector.total_shares)
        if (v < 0) throw ValidationError("sector.shares must be nonnegative");
    if (spec.sector.total_cash < 0) throw ValidationError("sector.cash must be nonnegative");

    spec.initial = detail::parse_state(require_field(doc, "initial"), n, l, "initial");
    if (!(sector_of(spec.initial, n, l) == spec.sector))
        throw ValidationError("initial state does not lie in the declared sector");

    const auto& traj = require_field(doc, "trajectory");
    const double h = require_number(traj, "h");
    if (!(h > 0.0)) throw ValidationError("trajectory.h must be positive");
    const auto& pr = require_field(traj, "prices");
    if (!pr.is_array() || pr.empty()) throw ValidationError("trajectory.prices must be M x L, M >= 1");
    std::vector<int> prices;
    for (const auto& row : pr) {
        std::vector<int> r = detail::parse_int_row(row, "trajectory.prices row");
        if (static_cast<int>(r.size()) != l)
            throw ValidationError("trajectory.prices rows must have share_types entries");
        for (int v : r) {
            if (v < 0) throw ValidationError("prices must be nonnegative integers");
            prices.push_back(v);
        }
    }
    spec.trajectory = PriceTrajectory(h, l, std::move(prices));

    const auto& cmd = require_field(doc, "command");
    CommandSpec& c = spec.command;
    const auto& name = require_field(cmd, "name");
    if (!name.is_string()) throw ValidationError("command.name must be a string");
    c.name = name.get<std::string>();
    static const char* known[] = {"basis",     "evolve",        "transition",
                                  "portfolio", "semiclassical", "compare"};
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return c.name == k; }) == std::end(known))
        throw ValidationError("unknown command \"" + c.name + "\"");

    if (cmd.contains("final")) c.final_state = detail::parse_state(cmd["final"], n, l, "final");
    if (cmd.contains("trader")) c.trader = detail::require_int(cmd, "trader");
    if (cmd.contains("time")) c.time = detail::require_number(cmd, "time");
    if (cmd.contains("dump_hamiltonian")) c.dump_hamiltonian = detail::require_int(cmd, "dump_hamiltonian");
    if (cmd.contains("orders")) {
        c.orders = detail::parse_int_row(cmd["orders"], "command.orders");
        if (c.orders.empty()) throw ValidationError("command.orders must not be empty");
        for (int o : c.orders)
            if (o < 1) throw ValidationError("command.orders entries must be >= 1");
    }
    if (cmd.contains("include_exact")) {
        if (!cmd["include_exact"].is_boolean())
            throw ValidationError("command.include_exact must be a boolean");
        c.include_exact = cmd["include_exact"].get<bool>();
    }
    if (cmd.contains("order")) {
        const auto& o = cmd["order"];
        if (o.is_string() && o.get<std::string>() == "exact")
            c.portfolio_order = std::nullopt;
        else if (o.is_number_integer() && o.get<int>() >= 0)
            c.portfolio_order = o.get<int>();
        else
            throw ValidationError("command.order must be \"exact\" or a nonnegative integer");
    }
    if (cmd.contains("grid")) {
        const auto& g = cmd["grid"];
        c.grid.t_start = detail::require_number(g, "t_start");
        c.grid.t_end = detail::require_number(g, "t_end");
        c.grid.n_points = detail::require_int(g, "n_points");
        if (c.grid.n_points < 1) throw ValidationError("grid.n_points must be >= 1");
        if (c.grid.t_end < c.grid.t_start) throw ValidationError("grid.t_end must be >= t_start");
    }

    // per-command completeness
    if ((c.name == "transition" || c.name == "compare") && !c.final_state)
        throw ValidationError("command \"" + c.name + "\" requires \"final\"");
    if ((c.name == "portfolio" || c.name == "semiclassical") && !c.trader)
        throw ValidationError("command \"" + c.name + "\" requires \"trader\"");
    if (c.trader && (*c.trader < 0 || *c.trader >= n))
        throw ValidationError("command.trader out of range");
    if (c.dump_hamiltonian &&
        (*c.dump_hamiltonian < 0 || *c.dump_hamiltonian >= spec.trajectory.intervals()))
        throw ValidationError("command.dump_hamiltonian interval out of range");
    if (c.final_state) {
        if (!(sector_of(*c.final_state, n, l) == spec.sector))
            throw ValidationError("final state does not lie in the declared sector");
        if (*c.final_state == spec.initial &&
            std::find(c.orders.begin(), c.orders.end(), 1) != c.orders.end() &&
            (c.name == "transition" || c.name == "compare"))
            throw ValidationError(
                "first-order transition probability is undefined for final == initial");
    }
    return spec;
}

inline RunSpec parse_run_spec_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("JSON parse error: ") + e.what());
    }
    return parse_run_spec(doc);
}

inline RunSpec load_run_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open run spec \"" + path + "\"");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_spec_text(ss.str());
}

/// CSV with header "k,P_1,...,P_L" and one row per transaction interval.
inline PriceTrajectory load_price_csv(const std::string& path, double step,
                                      int expected_share_types = -1) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open price CSV \"" + path + "\"");
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                          : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw ParseError("price CSV is empty");
    const auto& header = rows.front();
    if (header.size() < 2 || header[0] != "k")
        throw ParseError("price CSV header must be \"k,P_1,...,P_L\"");
    const int l = static_cast<int>(header.size()) - 1;
    for (int a = 0; a < l; ++a)
        if (header[static_cast<std::size_t>(a) + 1] != "P_" + std::to_string(a + 1))
            throw ParseError("price CSV header must be \"k,P_1,...,P_L\"");
    if (expected_share_types > 0 && l != expected_share_types)
        throw ValidationError("price CSV has " + std::to_string(l) +
                              " share columns, expected " + std::to_string(expected_share_types));
    if (rows.size() < 2) throw ParseError("price CSV has no data rows");

    auto parse_cell_int = [](const std::string& cell, const char* what) {
        int v = 0;
        const char* first = cell.data();
        const char* last = cell.data() + cell.size();
        auto [p, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || p != last)
            throw ParseError(std::string(what) + " \"" + cell + "\" is not an integer");
        return v;
    };

    std::vector<int> prices;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (static_cast<int>(cells.size()) != l + 1)
            throw ParseError("price CSV row " + std::to_string(r) + " is ragged");
        parse_cell_int(cells[0], "price CSV interval index");
        for (int a = 0; a < l; ++a) {
            const int v = parse_cell_int(cells[static_cast<std::size_t>(a) + 1], "price");
            if (v < 0) throw ValidationError("prices must be nonnegative integers");
            prices.push_back(v);
        }
    }
    return PriceTrajectory(step, l, std::move(prices));
}

namespace detail {

inline std::vector<double> make_grid(const TimeGridSpec& g, double duration) {
    double a = g.t_end < 0.0 ? 0.0 : g.t_start;
    double b = g.t_end < 0.0 ? duration : g.t_end;
    a = std::clamp(a, 0.0, duration);
    b = std::clamp(b, 0.0, duration);
    std::vector<double> ts;
    ts.reserve(static_cast<std::size_t>(g.n_points));
    if (g.n_points == 1) {
        ts.push_back(b);
        return ts;
    }
    for (int i = 0; i < g.n_points; ++i)
        ts.push_back(a + (b - a) * i / (g.n_points - 1));
    return ts;
}

inline std::string occupation_column(const char* prefix, int trader, int share) {
    return std::string(prefix) + "_" + std::to_string(trader) + "_" + std::to_string(share);
}

}  // namespace detail

inline ResultRecord run(const RunSpec& spec) {
    const auto t_begin = std::chrono::steady_clock::now();
    const MarketConfig& cfg = spec.config;
    const int n = cfg.traders();
    const int l = cfg.share_types();
    const SectorBasis basis = enumerate_sector(cfg, spec.sector);
    const int dim = basis.dimension();
    const CommandSpec& c = spec.command;
    const double duration = spec.trajectory.duration();

    ResultRecord rec;
    rec.command_echo = spec.document.at("command");
    rec.inputs_digest = detail::fnv1a_hex(spec.document.dump());

    double validity_time = duration;
    if (c.time) validity_time = std::clamp(*c.time, 0.0, duration);

    try {  // dispatch; module errors pick up command context in the handlers below
    if (c.name == "basis") {
        rec.extra_diagnostics["sector_dimension"] = dim;
        ResultTable tbl;
        tbl.name = "states";
        tbl.columns = {"index"};
        for (int j = 0; j < n; ++j)
            for (int a = 0; a < l; ++a) tbl.columns.push_back(detail::occupation_column("n", j, a));
        for (int j = 0; j < n; ++j) tbl.columns.push_back("k_" + std::to_string(j));
        tbl.columns.push_back("energy");
        for (int i = 0; i < dim; ++i) {
            const BasisState& s = basis.state(i);
            std::vector<double> row;
            row.push_back(i);
            for (int v : s.shares) row.push_back(v);
            for (int v : s.cash) row.push_back(v);
            row.push_back(basis.energy(i));
            tbl.rows.push_back(std::move(row));
        }
        rec.tables.push_back(std::move(tbl));
        if (c.dump_hamiltonian) {
            std::ostringstream os;
            dump_coordinate(build_H(cfg, basis, spec.trajectory, *c.dump_hamiltonian), os);
            rec.extra_files.emplace_back(
                "hamiltonian_interval_" + std::to_string(*c.dump_hamiltonian) + ".txt", os.str());
        }
    } else if (c.name == "evolve") {
        const std::vector<double> ts = detail::make_grid(c.grid, duration);
        validity_time = ts.empty() ? 0.0 : ts.back();
        ExactPropagator prop(cfg, basis, spec.trajectory);
        PropagationCache cache(prop, StateVector::basis_state(basis, basis.index(spec.initial)));
        ResultTable amp;
        amp.name = "amplitudes";
        amp.columns = {"t"};
        for (int i = 0; i < dim; ++i) {
            amp.columns.push_back("re_" + std::to_string(i));
            amp.columns.push_back("im_" + std::to_string(i));
        }
        ResultTable occ;
        occ.name = "occupations";
        occ.columns = {"t"};
        for (int j = 0; j < n; ++j)
            for (int a = 0; a < l; ++a) occ.columns.push_back(detail::occupation_column("n", j, a));
        for (int j = 0; j < n; ++j) occ.columns.push_back("k_" + std::to_string(j));
        for (double t : ts) {
            StateVector psi = cache.at(t);
            std::vector<double> arow{t};
            for (int i = 0; i < dim; ++i) {
                arow.push_back(psi.amplitude(i).real());
                arow.push_back(psi.amplitude(i).imag());
            }
            amp.rows.push_back(std::move(arow));
            std::vector<double> orow{t};
            PropagationResult tmp{psi, {}};
            std::vector<Occupations> occs;
            occs.reserve(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) occs.push_back(expectation_occupations(tmp, j));
            for (int j = 0; j < n; ++j)
                for (int a = 0; a < l; ++a)
                    orow.push_back(occs[static_cast<std::size_t>(j)].shares[static_cast<std::size_t>(a)]);
            for (int j = 0; j < n; ++j) orow.push_back(occs[static_cast<std::size_t>(j)].cash);
            occ.rows.push_back(std::move(orow));
        }
        rec.tables.push_back(std::move(amp));
        rec.tables.push_back(std::move(occ));
    } else if (c.name == "transition" || c.name == "compare") {
        const std::vector<double> ts = detail::make_grid(c.grid, duration);
        validity_time = ts.empty() ? 0.0 : ts.back();
        const BasisState& ff = *c.final_state;
        const int ifinal = basis.index(ff);
        const bool want_exact = c.include_exact || c.name == "compare";
        std::vector<int> orders = c.orders;
        const int max_order = *std::max_element(orders.begin(), orders.end());

        bool constant_prices = true;
        for (int k = 1; k < spec.trajectory.intervals(); ++k)
            for (int a = 0; a < l; ++a)
                if (spec.trajectory.price(k, a) != spec.trajectory.price(0, a))
                    constant_prices = false;
        const bool want_order2 =
            std::find(orders.begin(), orders.end(), 2) != orders.end();
        const bool closed_second = c.name == "compare" && want_order2 && constant_prices &&
                                   !(ff == spec.initial);

        std::optional<ExactPropagator> prop;
        std::optional<PropagationCache> cache;
        if (want_exact) {
            prop.emplace(cfg, basis, spec.trajectory);
            cache.emplace(*prop, StateVector::basis_state(basis, basis.index(spec.initial)));
        }
        ResultTable tbl;
        tbl.name = c.name;
        tbl.columns = {"t"};
        for (int o : orders) tbl.columns.push_back("p_order_" + std::to_string(o));
        if (closed_second) tbl.columns.push_back("p_order_2_closed");
        if (want_exact) tbl.columns.push_back("p_exact");
        if (c.name == "compare") {
            for (int o : orders) tbl.columns.push_back("rel_err_order_" + std::to_string(o));
            tbl.columns.push_back("validity");
        }
        for (double t : ts) {
            std::vector<double> row{t};
            DysonCoefficients dc =
                dyson_coefficients(cfg, basis, spec.trajectory, spec.initial, max_order, t);
            std::vector<double> pvals;
            for (int o : orders) {
                DysonCoefficients partial{o, cfg.lambda,
                                          {dc.coeffs.begin(), dc.coeffs.begin() + o + 1}};
                if (ifinal == basis.index(spec.initial) && o == 1)
                    throw ValidationError("first-order probability undefined at final == initial");
                double p = (o == 1)
                               ? p1_transition(cfg, basis, spec.trajectory, spec.initial, ff, t)
                               : partial.probability(ifinal);
                pvals.push_back(p);
                row.push_back(p);
            }
            if (closed_second) {
                // independent closed-form route to the same partial sum
                const std::complex<double> c1 =
                    c1_coefficient(cfg, basis, spec.trajectory, spec.initial, ff, t);
                const std::complex<double> c2 = c2_constant(
                    cfg, basis, spec.initial, ff, spec.trajectory.row(0), t);
                row.push_back(std::norm(cfg.lambda * c1 + cfg.lambda * cfg.lambda * c2));
            }
            double pe = 0.0;
            if (want_exact) {
                pe = std::norm(cache->at(t).amplitude(ifinal));
                row.push_back(pe);
            }
            if (c.name == "compare") {
                for (double p : pvals)
                    row.push_back(pe > 0.0 ? std::abs(p - pe) / pe : std::abs(p - pe));
                row.push_back(validity_indicator(cfg, basis, spec.trajectory, t));
            }
            tbl.rows.push_back(std::move(row));
        }
        rec.tables.push_back(std::move(tbl));

        if (constant_prices && !(ff == spec.initial)) {
            rec.extra_diagnostics["golden_rule_rate"] = golden_rule_rate(
                cfg, basis, spec.initial, ff, spec.trajectory.row(0));
            rec.extra_diagnostics["resonant"] =
                resonance_diagnostic(cfg, basis, spec.initial, ff, spec.trajectory.row(0))
                    .resonant;
        }
        if (c.name == "compare" && want_order2 && spec.trajectory.intervals() == 3 &&
            !constant_prices) {
            const std::complex<double> c2m3 =
                c2_piecewise_M3(cfg, basis, spec.trajectory, spec.initial, ff);
            rec.extra_diagnostics["c2_m3_re"] = c2m3.real();
            rec.extra_diagnostics["c2_m3_im"] = c2m3.imag();
        }
    } else if (c.name == "portfolio") {
        const double t = std::clamp(c.time.value_or(duration), 0.0, duration);
        validity_time = t;
        const int trader = *c.trader;
        const std::span<const int> prices = spec.trajectory.row(spec.trajectory.interval_at(t));
        const std::vector<long long> targets = achievable_portfolios(basis, prices, trader);

        // one propagation / one hierarchy solve shared by all targets
        std::vector<double> per_state(static_cast<std::size_t>(dim), 0.0);
        if (!c.portfolio_order) {
            ExactPropagator prop(cfg, basis, spec.trajectory);
            StateVector psi =
                prop.propagate(StateVector::basis_state(basis, basis.index(spec.initial)), t);
            for (int i = 0; i < dim; ++i) per_state[static_cast<std::size_t>(i)] =
                std::norm(psi.amplitude(i));
        } else {
            DysonCoefficients dc = dyson_coefficients(cfg, basis, spec.trajectory, spec.initial,
                                                      *c.portfolio_order, t);
            for (int i = 0; i < dim; ++i)
                per_state[static_cast<std::size_t>(i)] = dc.probability(i);
        }
        ResultTable tbl;
        tbl.name = "portfolio";
        tbl.columns = {"target", "probability"};
        for (long long target : targets) {
            double acc = 0.0;
            for (int i = 0; i < dim; ++i)
                if (static_cast<long long>(portfolio_value(basis.state(i), prices, trader)) ==
                    target)
                    acc += per_state[static_cast<std::size_t>(i)];
            tbl.rows.push_back({static_cast<double>(target), acc});
        }
        rec.tables.push_back(std::move(tbl));
    } else if (c.name == "semiclassical") {
        const std::vector<double> ts = detail::make_grid(c.grid, duration);
        validity_time = ts.empty() ? 0.0 : ts.back();
        const int trader = *c.trader;
        ResultTable tbl;
        tbl.name = "semiclassical";
        tbl.columns = {"t"};
        for (int a = 0; a < l; ++a)
            tbl.columns.push_back("delta_n_" + std::to_string(a));
        tbl.columns.push_back("delta_k");
        tbl.columns.push_back("portfolio");
        tbl.columns.push_back("sum_rule_residual");
        for (double t : ts) {
            OccupationShift d = delta_occupations(cfg, spec.initial, spec.trajectory, trader, t);
            std::vector<double> row{t};
            for (int a = 0; a < l; ++a) row.push_back(d.shares[static_cast<std::size_t>(a)]);
            row.push_back(d.cash);
            row.push_back(portfolio_evolution(cfg, spec.initial, spec.trajectory, trader, t));
            row.push_back(sum_rule_residual(cfg, spec.initial, spec.trajectory, trader, t));
            tbl.rows.push_back(std::move(row));
        }
        rec.tables.push_back(std::move(tbl));
    } else {
        throw ValidationError("unknown command \"" + c.name + "\"");
    }
    } catch (const ValidationError& e) {
        throw ValidationError("command \"" + c.name + "\": " + e.what());
    } catch (const std::out_of_range& e) {
        throw std::out_of_range("command \"" + c.name + "\": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("command \"" + c.name + "\": " + e.what());
    }

    rec.validity = validity_indicator(cfg, basis, spec.trajectory, validity_time);
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t_begin)
                         .count();
    return rec;
}

inline std::string table_to_csv(const ResultTable& tbl) {
    std::string out;
    for (std::size_t i = 0; i < tbl.columns.size(); ++i) {
        if (i) out += ',';
        out += tbl.columns[i];
    }
    out += '\n';
    for (const auto& row : tbl.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += detail::format_g17(row[i]);
        }
        out += '\n';
    }
    return out;
}

/// Writes <table>.csv per table plus manifest.json into dir (created if
/// missing). Identical records produce byte-identical files.
inline void write_results(const ResultRecord& rec, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& tbl : rec.tables) {
        std::ofstream out(dir / (tbl.name + ".csv"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write table " + tbl.name);
        out << table_to_csv(tbl);
    }
    for (const auto& [name, content] : rec.extra_files) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + name);
        out << content;
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest.json");
    out << rec.manifest().dump(2) << '\n';
}

}  // namespace qmarket

#endif
