#include "rmcse/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "rmcse/error.hpp"

namespace rmcse {

namespace {

// Physical value whose per-unit conversion reproduces `pu` bit for bit, so
// that serialization round-trips exactly.
double to_physical(double pu, double base) {
    double y = pu * base;
    for (int k = 0; k < 8 && y / base != pu; ++k) {
        y = std::nextafter(y, (y / base < pu) == (base > 0) ? INFINITY : -INFINITY);
    }
    return y;
}

int line_of_offset(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

}  // namespace

Network::Network(std::vector<Bus> buses, std::vector<Branch> branches, double base_mva, double base_kv)
    : buses_(std::move(buses)), branches_(std::move(branches)), base_mva_(base_mva), base_kv_(base_kv) {
    const int n = num_buses();
    if (n < 1) throw ValidationError("network has no buses");
    if (!(base_mva_ > 0.0) || !(base_kv_ > 0.0)) throw ValidationError("base_mva and base_kv must be positive");

    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (const Bus& bus : buses_) {
        if (bus.id < 0 || bus.id >= n) {
            throw ValidationError("bus id " + std::to_string(bus.id) + " outside 0.." + std::to_string(n - 1));
        }
        if (seen[static_cast<std::size_t>(bus.id)]) throw ValidationError("duplicate bus id " + std::to_string(bus.id));
        seen[static_cast<std::size_t>(bus.id)] = 1;
    }
    std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });

    for (const Bus& bus : buses_) {
        if (bus.kind == BusKind::slack) {
            if (slack_ >= 0) throw ValidationError("more than one slack bus");
            slack_ = bus.id;
        }
    }
    if (slack_ < 0) throw ValidationError("no slack bus");

    if (num_branches() != n - 1) {
        throw ValidationError("radial network needs " + std::to_string(n - 1) + " branches, got " +
                              std::to_string(num_branches()));
    }
    incidence_.assign(static_cast<std::size_t>(n), {});
    for (int k = 0; k < num_branches(); ++k) {
        const Branch& br = branches_[static_cast<std::size_t>(k)];
        if (br.from_bus < 0 || br.from_bus >= n || br.to_bus < 0 || br.to_bus >= n) {
            throw ValidationError("branch " + std::to_string(k) + " references an unknown bus");
        }
        if (br.from_bus == br.to_bus) throw ValidationError("branch " + std::to_string(k) + " is a self loop");
        if (br.r < 0.0) throw ValidationError("branch " + std::to_string(k) + " has negative resistance");
        if (br.r == 0.0 && br.x == 0.0) throw InvalidBranchError("branch " + std::to_string(k) + " has zero impedance");
        incidence_[static_cast<std::size_t>(br.from_bus)].push_back(k);
        incidence_[static_cast<std::size_t>(br.to_bus)].push_back(k);
    }

    // n-1 edges plus connectivity implies a spanning tree.
    std::vector<char> reached(static_cast<std::size_t>(n), 0);
    std::queue<int> frontier;
    frontier.push(slack_);
    reached[static_cast<std::size_t>(slack_)] = 1;
    int count = 1;
    while (!frontier.empty()) {
        const int bus = frontier.front();
        frontier.pop();
        for (int k : incidence_[static_cast<std::size_t>(bus)]) {
            const Branch& br = branches_[static_cast<std::size_t>(k)];
            const int other = br.from_bus == bus ? br.to_bus : br.from_bus;
            if (!reached[static_cast<std::size_t>(other)]) {
                reached[static_cast<std::size_t>(other)] = 1;
                ++count;
                frontier.push(other);
            }
        }
    }
    if (count != n) throw ValidationError("network is not connected (non-radial topology)");
}

Network Network::with_load_scale(double factor) const {
    std::vector<Bus> scaled = buses_;
    for (Bus& bus : scaled) {
        bus.p_load *= factor;
        bus.q_load *= factor;
    }
    return Network(std::move(scaled), branches_, base_mva_, base_kv_);
}

bool Network::operator==(const Network& other) const {
    return buses_ == other.buses_ && branches_ == other.branches_ && base_mva_ == other.base_mva_ &&
           base_kv_ == other.base_kv_;
}

Complex branch_admittance(const Branch& branch) {
    if (branch.r == 0.0 && branch.x == 0.0) throw InvalidBranchError("zero-impedance branch");
    return 1.0 / Complex(branch.r, branch.x);
}

ComplexMatrix build_ybus(const Network& network) {
    const int n = network.num_buses();
    ComplexMatrix y = ComplexMatrix::Zero(n, n);
    for (const Branch& br : network.branches()) {
        const Complex yk = branch_admittance(br);
        y(br.from_bus, br.from_bus) += yk;
        y(br.to_bus, br.to_bus) += yk;
        y(br.from_bus, br.to_bus) -= yk;
        y(br.to_bus, br.from_bus) -= yk;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Native JSON schema

Network parse_case_json(std::string_view text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), line_of_offset(text, e.byte));
    }

    auto number = [](const json& obj, const char* key, const std::string& where) {
        auto it = obj.find(key);
        if (it == obj.end() || !it->is_number()) throw ParseError(where + "." + key + ": expected number");
        return it->get<double>();
    };
    auto integer = [](const json& obj, const char* key, const std::string& where) {
        auto it = obj.find(key);
        if (it == obj.end() || !it->is_number_integer()) throw ParseError(where + "." + key + ": expected integer");
        return it->get<int>();
    };

    if (!doc.is_object()) throw ParseError("case document must be a JSON object");
    const double base_mva = number(doc, "base_mva", "case");
    const double base_kv = number(doc, "base_kv", "case");
    const double z_base = base_kv * base_kv / base_mva;
    if (!doc.contains("buses") || !doc["buses"].is_array()) throw ParseError("case.buses: expected array");
    if (!doc.contains("branches") || !doc["branches"].is_array()) throw ParseError("case.branches: expected array");

    std::vector<Bus> buses;
    int min_id = 0;
    for (std::size_t i = 0; i < doc["buses"].size(); ++i) {
        const json& b = doc["buses"][i];
        const std::string where = "buses[" + std::to_string(i) + "]";
        if (!b.is_object()) throw ParseError(where + ": expected object");
        Bus bus;
        bus.id = integer(b, "id", where);
        const auto kind = b.find("kind");
        if (kind == b.end() || !kind->is_string()) throw ParseError(where + ".kind: expected string");
        if (*kind == "slack") {
            bus.kind = BusKind::slack;
        } else if (*kind == "load") {
            bus.kind = BusKind::load;
        } else {
            throw ParseError(where + ".kind: expected \"slack\" or \"load\"");
        }
        bus.p_load = number(b, "p_load_mw", where) / base_mva;
        bus.q_load = number(b, "q_load_mvar", where) / base_mva;
        min_id = i == 0 ? bus.id : std::min(min_id, bus.id);
        buses.push_back(bus);
    }

    std::vector<Branch> branches;
    for (std::size_t i = 0; i < doc["branches"].size(); ++i) {
        const json& b = doc["branches"][i];
        const std::string where = "branches[" + std::to_string(i) + "]";
        if (!b.is_object()) throw ParseError(where + ": expected object");
        Branch br;
        br.from_bus = integer(b, "from", where);
        br.to_bus = integer(b, "to", where);
        br.r = number(b, "r_ohm", where) / z_base;
        br.x = number(b, "x_ohm", where) / z_base;
        branches.push_back(br);
    }

    // 1-based ids are shifted to 0-based.
    if (min_id == 1) {
        for (Bus& bus : buses) --bus.id;
        for (Branch& br : branches) {
            --br.from_bus;
            --br.to_bus;
        }
    }
    return Network(std::move(buses), std::move(branches), base_mva, base_kv);
}

std::string serialize_case(const Network& network) {
    using nlohmann::ordered_json;
    const double z_base = network.base_impedance();
    ordered_json doc;
    doc["base_mva"] = network.base_mva();
    doc["base_kv"] = network.base_kv();
    doc["buses"] = ordered_json::array();
    for (const Bus& bus : network.buses()) {
        ordered_json b;
        b["id"] = bus.id;
        b["kind"] = bus.kind == BusKind::slack ? "slack" : "load";
        b["p_load_mw"] = to_physical(bus.p_load, network.base_mva());
        b["q_load_mvar"] = to_physical(bus.q_load, network.base_mva());
        doc["buses"].push_back(b);
    }
    doc["branches"] = ordered_json::array();
    for (const Branch& br : network.branches()) {
        ordered_json b;
        b["from"] = br.from_bus;
        b["to"] = br.to_bus;
        b["r_ohm"] = to_physical(br.r, z_base);
        b["x_ohm"] = to_physical(br.x, z_base);
        doc["branches"].push_back(b);
    }
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// MATPOWER-style case subset

namespace {

struct MatrixRow {
    int line = 0;
    std::vector<double> values;
};

std::string strip_comment(std::string_view line) {
    const auto pos = line.find('%');
    return std::string(line.substr(0, pos));
}

double parse_number(const std::string& token, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw ParseError("invalid number '" + token + "'", line);
    }
}

}  // namespace

Network parse_case_matpower(std::string_view text) {
    std::vector<std::string> lines;
    {
        std::string current;
        for (char ch : text) {
            if (ch == '\n') {
                lines.push_back(strip_comment(current));
                current.clear();
            } else {
                current.push_back(ch);
            }
        }
        lines.push_back(strip_comment(current));
    }

    double base_mva = 0.0;
    bool have_base = false;
    std::map<std::string, std::vector<MatrixRow>> tables;
    std::string open_table;
    int open_line = 0;
    MatrixRow pending;

    auto flush_row = [&](MatrixRow& row) {
        if (!row.values.empty()) tables[open_table].push_back(row);
        row = MatrixRow{};
    };
    auto consume = [&](const std::string& body, int line_no) {
        // Tokenize matrix contents; ';' terminates a row, ']' the matrix.
        std::string token;
        auto emit = [&]() {
            if (!token.empty()) {
                if (pending.values.empty()) pending.line = line_no;
                pending.values.push_back(parse_number(token, line_no));
                token.clear();
            }
        };
        for (char ch : body) {
            if (ch == ']') {
                emit();
                flush_row(pending);
                open_table.clear();
                return;
            }
            if (ch == ';') {
                emit();
                flush_row(pending);
            } else if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') {
                emit();
            } else {
                token.push_back(ch);
            }
        }
        emit();
        flush_row(pending);  // newline also ends a row
    };

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const int line_no = static_cast<int>(i) + 1;
        const std::string& line = lines[i];
        if (!open_table.empty()) {
            consume(line, line_no);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string lhs = line.substr(0, eq);
        lhs.erase(std::remove_if(lhs.begin(), lhs.end(), [](unsigned char c) { return std::isspace(c); }), lhs.end());
        const std::string rhs = line.substr(eq + 1);
        if (lhs == "mpc.baseMVA") {
            std::string value = rhs;
            value.erase(std::remove_if(value.begin(), value.end(),
                                       [](unsigned char c) { return std::isspace(c) || c == ';'; }),
                        value.end());
            base_mva = parse_number(value, line_no);
            have_base = true;
        } else if (lhs == "mpc.bus" || lhs == "mpc.branch") {
            const auto bracket = rhs.find('[');
            if (bracket == std::string::npos) throw ParseError("expected '[' after " + lhs, line_no);
            open_table = lhs;
            open_line = line_no;
            tables[open_table];
            consume(rhs.substr(bracket + 1), line_no);
        }
    }
    if (!open_table.empty()) throw ParseError("unterminated matrix " + open_table, open_line);
    if (!have_base) throw ParseError("missing mpc.baseMVA");
    if (!tables.count("mpc.bus")) throw ParseError("missing mpc.bus");
    if (!tables.count("mpc.branch")) throw ParseError("missing mpc.branch");

    const auto& bus_rows = tables["mpc.bus"];
    const auto& branch_rows = tables["mpc.branch"];

    std::map<long, int> index_of;
    for (const MatrixRow& row : bus_rows) {
        if (row.values.size() < 10) throw ParseError("bus row needs at least 10 columns", row.line);
        const long ext = std::lround(row.values[0]);
        if (index_of.count(ext)) throw ValidationError("duplicate bus id " + std::to_string(ext));
        index_of[ext] = 0;
    }
    int next = 0;
    for (auto& [ext, idx] : index_of) idx = next++;

    double base_kv = 0.0;
    std::vector<Bus> buses;
    for (const MatrixRow& row : bus_rows) {
        Bus bus;
        bus.id = index_of[std::lround(row.values[0])];
        const int type = static_cast<int>(std::lround(row.values[1]));
        bus.kind = type == 3 ? BusKind::slack : BusKind::load;
        bus.p_load = row.values[2] / base_mva;
        bus.q_load = row.values[3] / base_mva;
        if (row.values[4] != 0.0 || row.values[5] != 0.0) {
            throw ValidationError("bus shunts are not supported (line " + std::to_string(row.line) + ")");
        }
        if (base_kv == 0.0) base_kv = row.values[9];
        buses.push_back(bus);
    }

    std::vector<Branch> branches;
    for (const MatrixRow& row : branch_rows) {
        if (row.values.size() < 4) throw ParseError("branch row needs at least 4 columns", row.line);
        if (row.values.size() > 10 && row.values[10] == 0.0) continue;  // out of service
        if (row.values.size() > 4 && row.values[4] != 0.0) {
            throw ValidationError("line charging is not supported (line " + std::to_string(row.line) + ")");
        }
        const long f = std::lround(row.values[0]);
        const long t = std::lround(row.values[1]);
        if (!index_of.count(f) || !index_of.count(t)) {
            throw ValidationError("branch on line " + std::to_string(row.line) + " references an unknown bus");
        }
        branches.push_back(Branch{index_of[f], index_of[t], row.values[2], row.values[3]});
    }
    return Network(std::move(buses), std::move(branches), base_mva, base_kv);
}

Network parse_case(std::string_view text) {
    const auto first = std::find_if(text.begin(), text.end(), [](unsigned char c) { return !std::isspace(c); });
    if (first != text.end() && *first == '{') return parse_case_json(text);
    return parse_case_matpower(text);
}

Network load_case(const std::string& source) {
    if (source == "builtin:ieee33") return builtin_ieee33();
    std::ifstream in(source);
    if (!in) throw Error("cannot read case file '" + source + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_case(buffer.str());
}

// ---------------------------------------------------------------------------

Network builtin_ieee33() {
    struct LoadRow {
        double p_kw, q_kvar;
    };
    static constexpr LoadRow loads[33] = {
        {0, 0},     {100, 60},  {90, 40},   {120, 80},  {60, 30},   {60, 20},   {200, 100}, {200, 100}, {60, 20},
        {60, 20},   {45, 30},   {60, 35},   {60, 35},   {120, 80},  {60, 10},   {60, 20},   {60, 20},   {90, 40},
        {90, 40},   {90, 40},   {90, 40},   {90, 40},   {90, 50},   {420, 200}, {420, 200}, {60, 25},   {60, 25},
        {60, 20},   {120, 70},  {200, 600}, {150, 70},  {210, 100}, {60, 40},
    };
    struct LineRow {
        int from, to;
        double r_ohm, x_ohm;
    };
    // 1-based bus numbers as published.
    static constexpr LineRow lines[32] = {
        {1, 2, 0.0922, 0.0470},   {2, 3, 0.4930, 0.2511},   {3, 4, 0.3660, 0.1864},   {4, 5, 0.3811, 0.1941},
        {5, 6, 0.8190, 0.7070},   {6, 7, 0.1872, 0.6188},   {7, 8, 0.7114, 0.2351},   {8, 9, 1.0300, 0.7400},
        {9, 10, 1.0440, 0.7400},  {10, 11, 0.1966, 0.0650}, {11, 12, 0.3744, 0.1238}, {12, 13, 1.4680, 1.1550},
        {13, 14, 0.5416, 0.7129}, {14, 15, 0.5910, 0.5260}, {15, 16, 0.7463, 0.5450}, {16, 17, 1.2890, 1.7210},
        {17, 18, 0.7320, 0.5740}, {2, 19, 0.1640, 0.1565},  {19, 20, 1.5042, 1.3554}, {20, 21, 0.4095, 0.4784},
        {21, 22, 0.7089, 0.9373}, {3, 23, 0.4512, 0.3083},  {23, 24, 0.8980, 0.7091}, {24, 25, 0.8960, 0.7011},
        {6, 26, 0.2030, 0.1034},  {26, 27, 0.2842, 0.1447}, {27, 28, 1.0590, 0.9337}, {28, 29, 0.8042, 0.7006},
        {29, 30, 0.5075, 0.2585}, {30, 31, 0.9744, 0.9630}, {31, 32, 0.3105, 0.3619}, {32, 33, 0.3410, 0.5302},
    };
    constexpr double base_mva = 10.0;
    constexpr double base_kv = 12.66;
    const double z_base = base_kv * base_kv / base_mva;

    std::vector<Bus> buses;
    for (int i = 0; i < 33; ++i) {
        buses.push_back(Bus{i, i == 0 ? BusKind::slack : BusKind::load, loads[i].p_kw / 1000.0 / base_mva,
                            loads[i].q_kvar / 1000.0 / base_mva});
    }
    std::vector<Branch> branches;
    for (const LineRow& l : lines) {
        branches.push_back(Branch{l.from - 1, l.to - 1, l.r_ohm / z_base, l.x_ohm / z_base});
    }
    return Network(std::move(buses), std::move(branches), base_mva, base_kv);
}

}  // namespace rmcse
