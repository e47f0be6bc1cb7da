#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qmarket/io.hpp"

using namespace qmarket;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

nlohmann::json six_state_doc() {
    return nlohmann::json{
        {"traders", 2},
        {"share_types", 1},
        {"lambda", 0.01},
        {"omega_share", {{1.0}, {2.0}}},
        {"omega_cash", {0.3, 0.5}},
        {"coupling", {{{0.0}, {0.1}}, {{0.1}, {0.0}}}},
        {"sector", {{"shares", {1}}, {"cash", 2}}},
        {"initial", {{"shares", {{0}, {1}}}, {"cash", {2, 0}}}},
        {"trajectory", {{"h", 1.0}, {"prices", {{1}, {2}}}}},
        {"command", {{"name", "basis"}}}};
}

fs::path temp_file(const std::string& name, const std::string& content) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
}

}  // namespace

TEST_CASE("a minimal document parses and round-trips canonically") {
    nlohmann::json doc = six_state_doc();
    RunSpec spec = parse_run_spec(doc);
    REQUIRE(spec.config.traders() == 2);
    REQUIRE(spec.config.coupling(0, 1, 0) == Approx(0.1));
    REQUIRE(spec.trajectory.intervals() == 2);
    RunSpec again = parse_run_spec_text(spec.document.dump());
    REQUIRE(again.document.dump() == spec.document.dump());
}

TEST_CASE("documents violating the invariants are rejected") {
    nlohmann::json doc = six_state_doc();
    doc["initial"]["cash"] = {1, 0};  // totals 1, sector says 2
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);

    doc = six_state_doc();
    doc["trajectory"]["prices"] = {{-1}};
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);

    doc = six_state_doc();
    doc["trajectory"]["prices"] = {{1.5}};
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);

    doc = six_state_doc();
    doc["coupling"][0][1][0] = 0.1;
    doc["coupling"][1][0][0] = 0.2;
    REQUIRE_THROWS_AS(parse_run_spec(doc), SymmetryViolation);

    doc = six_state_doc();
    doc.erase("sector");
    REQUIRE_THROWS_AS(parse_run_spec(doc), ParseError);

    doc = six_state_doc();
    doc["command"]["name"] = "steer";
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);

    REQUIRE_THROWS_AS(parse_run_spec_text("{not json"), ParseError);
}

TEST_CASE("first order at final == initial is rejected up front") {
    nlohmann::json doc = six_state_doc();
    doc["command"] = {{"name", "transition"},
                      {"final", doc["initial"]},
                      {"orders", {1}},
                      {"grid", {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 3}}}};
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);
    doc["command"]["orders"] = {2};  // higher orders include the zeroth term and are fine
    REQUIRE_NOTHROW(parse_run_spec(doc));
}

TEST_CASE("price CSV loading handles the documented shapes and failures") {
    fs::path three = temp_file("qm_prices3.csv", "k,P_1\n0,1\n1,2\n2,0\n");
    PriceTrajectory t3 = load_price_csv(three.string(), 0.5);
    REQUIRE(t3.intervals() == 3);
    REQUIRE(t3.price(1, 0) == 2);

    fs::path one = temp_file("qm_prices1.csv", "k,P_1\n0,4\n");
    PriceTrajectory t1 = load_price_csv(one.string(), 1.0);
    REQUIRE(t1.intervals() == 1);

    fs::path frac = temp_file("qm_prices_frac.csv", "k,P_1\n0,1.5\n");
    REQUIRE_THROWS_AS(load_price_csv(frac.string(), 1.0), ParseError);

    fs::path ragged = temp_file("qm_prices_ragged.csv", "k,P_1,P_2\n0,1,2\n1,3\n");
    REQUIRE_THROWS_AS(load_price_csv(ragged.string(), 1.0), ParseError);

    fs::path empty = temp_file("qm_prices_empty.csv", "");
    REQUIRE_THROWS_AS(load_price_csv(empty.string(), 1.0), ParseError);

    fs::path header = temp_file("qm_prices_header.csv", "k,Q_1\n0,1\n");
    REQUIRE_THROWS_AS(load_price_csv(header.string(), 1.0), ParseError);

    REQUIRE_THROWS_AS(load_price_csv(three.string(), 1.0, 2), ValidationError);
    REQUIRE_THROWS_AS(load_price_csv("/nonexistent/prices.csv", 1.0), ParseError);
}

TEST_CASE("the basis command reports the six-state sector") {
    RunSpec spec = parse_run_spec(six_state_doc());
    ResultRecord rec = run(spec);
    REQUIRE(rec.tables.size() == 1);
    REQUIRE(rec.tables[0].name == "states");
    REQUIRE(rec.tables[0].rows.size() == 6);
    REQUIRE(rec.inputs_digest.size() == 16);
    REQUIRE(rec.manifest()["diagnostics"]["sector_dimension"].get<int>() == 6);
}

TEST_CASE("module errors propagate with command context") {
    nlohmann::json doc = six_state_doc();
    doc["command"] = {{"name", "transition"},
                      {"final", {{"shares", {{1}, {0}}}, {"cash", {1, 1}}}},
                      {"orders", {2}},
                      {"grid", {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 2}}}};
    RunSpec spec = parse_run_spec(doc);
    spec.command.final_state = spec.initial;  // sidestep the parse-time guard
    spec.command.orders = {1};
    try {
        (void)run(spec);
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(std::string(e.what()).find("command \"transition\"") != std::string::npos);
    }
}

TEST_CASE("the basis command can dump the interval Hamiltonian") {
    nlohmann::json doc = six_state_doc();
    doc["command"]["dump_hamiltonian"] = 1;
    ResultRecord rec = run(parse_run_spec(doc));
    REQUIRE(rec.extra_files.size() == 1);
    REQUIRE(rec.extra_files[0].first == "hamiltonian_interval_1.txt");
    REQUIRE(rec.extra_files[0].second.find(' ') != std::string::npos);

    doc["command"]["dump_hamiltonian"] = 5;
    REQUIRE_THROWS_AS(parse_run_spec(doc), ValidationError);
}

TEST_CASE("every command is reachable and runs") {
    for (const char* name :
         {"basis", "evolve", "transition", "portfolio", "semiclassical", "compare"}) {
        nlohmann::json doc = six_state_doc();
        nlohmann::json cmd{{"name", name}};
        if (std::string(name) == "transition" || std::string(name) == "compare") {
            cmd["final"] = {{"shares", {{1}, {0}}}, {"cash", {1, 1}}};
            cmd["orders"] = {1, 2};
            cmd["grid"] = {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 5}};
        }
        if (std::string(name) == "portfolio") {
            cmd["trader"] = 0;
            cmd["time"] = 2.0;
            cmd["order"] = "exact";
        }
        if (std::string(name) == "semiclassical") {
            cmd["trader"] = 0;
            cmd["grid"] = {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 4}};
        }
        if (std::string(name) == "evolve")
            cmd["grid"] = {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 4}};
        doc["command"] = cmd;
        ResultRecord rec = run(parse_run_spec(doc));
        REQUIRE_FALSE(rec.tables.empty());
        for (const auto& tbl : rec.tables) {
            REQUIRE_FALSE(tbl.rows.empty());
            for (const auto& row : tbl.rows) REQUIRE(row.size() == tbl.columns.size());
        }
    }
}

TEST_CASE("closed-form perturbative routes surface through the commands") {
    // constant prices: compare gains the closed second-order column and the
    // transition manifest carries the golden-rule diagnostics
    nlohmann::json doc = six_state_doc();
    doc["trajectory"]["prices"] = {{1}, {1}};
    doc["command"] = {{"name", "compare"},
                      {"final", {{"shares", {{1}, {0}}}, {"cash", {1, 1}}}},
                      {"orders", {1, 2}},
                      {"grid", {{"t_start", 0.5}, {"t_end", 2.0}, {"n_points", 4}}}};
    ResultRecord rec = run(parse_run_spec(doc));
    const auto& tbl = rec.tables[0];
    auto col = [&](const std::string& name) {
        return std::find(tbl.columns.begin(), tbl.columns.end(), name) - tbl.columns.begin();
    };
    const auto i_closed = col("p_order_2_closed");
    const auto i_order2 = col("p_order_2");
    REQUIRE(static_cast<std::size_t>(i_closed) < tbl.columns.size());
    for (const auto& row : tbl.rows)
        REQUIRE(row[static_cast<std::size_t>(i_closed)] ==
                Approx(row[static_cast<std::size_t>(i_order2)]).margin(1e-12));
    REQUIRE(rec.manifest()["diagnostics"].contains("golden_rule_rate"));
    REQUIRE(rec.manifest()["diagnostics"]["resonant"].get<bool>() == false);

    // M = 3 with changing prices: the compare manifest reports the closed
    // second-order coefficient of the three-window formula
    nlohmann::json doc3 = six_state_doc();
    doc3["trajectory"]["prices"] = {{1}, {2}, {0}};
    doc3["command"] = doc["command"];
    doc3["command"]["grid"]["t_end"] = 3.0;
    ResultRecord rec3 = run(parse_run_spec(doc3));
    auto diag = rec3.manifest()["diagnostics"];
    REQUIRE(diag.contains("c2_m3_re"));
    RunSpec spec3 = parse_run_spec(doc3);
    SectorBasis basis = enumerate_sector(spec3.config, spec3.sector);
    const std::complex<double> expected = c2_piecewise_M3(
        spec3.config, basis, spec3.trajectory, spec3.initial, *spec3.command.final_state);
    REQUIRE(diag["c2_m3_re"].get<double>() == Approx(expected.real()).margin(1e-15));
    REQUIRE(diag["c2_m3_im"].get<double>() == Approx(expected.imag()).margin(1e-15));
}

TEST_CASE("compare stays inside the first-order error band") {
    nlohmann::json doc = six_state_doc();
    doc["command"] = {{"name", "compare"},
                      {"final", {{"shares", {{1}, {0}}}, {"cash", {1, 1}}}},
                      {"orders", {1}},
                      {"grid", {{"t_start", 0.5}, {"t_end", 2.0}, {"n_points", 4}}}};
    ResultRecord rec = run(parse_run_spec(doc));
    const auto& tbl = rec.tables[0];
    const std::size_t rel_col = 3;  // t, p_order_1, p_exact, rel_err_order_1, validity
    REQUIRE(tbl.columns[rel_col] == "rel_err_order_1");
    for (const auto& row : tbl.rows) REQUIRE(row[rel_col] < 0.05);
    REQUIRE(rec.validity > 0.0);
}

TEST_CASE("portfolio command groups exactly like the per-target operation") {
    nlohmann::json doc = six_state_doc();
    doc["command"] = {{"name", "portfolio"}, {"trader", 0}, {"time", 2.0}, {"order", "exact"}};
    RunSpec spec = parse_run_spec(doc);
    ResultRecord rec = run(spec);
    SectorBasis basis = enumerate_sector(spec.config, spec.sector);
    double total = 0.0;
    for (const auto& row : rec.tables[0].rows) {
        const double direct = portfolio_transition_probability(
            spec.config, basis, spec.trajectory, spec.initial, 0,
            static_cast<long long>(row[0]), 2.0, std::nullopt);
        REQUIRE(row[1] == Approx(direct).margin(1e-12));
        total += row[1];
    }
    REQUIRE(total == Approx(1.0).epsilon(1e-10));
}

TEST_CASE("identical run specs produce byte-identical result files") {
    nlohmann::json doc = six_state_doc();
    doc["command"] = {{"name", "compare"},
                      {"final", {{"shares", {{1}, {0}}}, {"cash", {1, 1}}}},
                      {"orders", {1, 2}},
                      {"grid", {{"t_start", 0.0}, {"t_end", 2.0}, {"n_points", 6}}}};
    RunSpec spec = parse_run_spec(doc);
    ResultRecord rec_a = run(spec);
    ResultRecord rec_b = run(parse_run_spec(doc));
    REQUIRE(rec_a.manifest().dump() == rec_b.manifest().dump());
    REQUIRE(rec_a.tables.size() == rec_b.tables.size());
    for (std::size_t i = 0; i < rec_a.tables.size(); ++i)
        REQUIRE(table_to_csv(rec_a.tables[i]) == table_to_csv(rec_b.tables[i]));

    fs::path dir_a = fs::temp_directory_path() / "qm_det_a";
    fs::path dir_b = fs::temp_directory_path() / "qm_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    write_results(rec_a, dir_a);
    write_results(rec_b, dir_b);
    for (const auto& entry : fs::directory_iterator(dir_a)) {
        std::ifstream fa(entry.path(), std::ios::binary);
        std::ifstream fb(dir_b / entry.path().filename(), std::ios::binary);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        REQUIRE(sa.str() == sb.str());
        REQUIRE_FALSE(sa.str().empty());
    }
}

TEST_CASE("run spec files load from disk with parse errors surfaced") {
    fs::path good = temp_file("qm_spec_good.json", six_state_doc().dump());
    RunSpec spec = load_run_spec(good.string());
    REQUIRE(spec.command.name == "basis");
    REQUIRE_THROWS_AS(load_run_spec("/nonexistent/spec.json"), ParseError);
    fs::path bad = temp_file("qm_spec_bad.json", "{\"traders\": }");
    REQUIRE_THROWS_AS(load_run_spec(bad.string()), ParseError);
}
