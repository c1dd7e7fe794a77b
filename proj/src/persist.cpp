#include "reer/persist.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace reer {
namespace {

using json = nlohmann::json;

json matrix_to_json(const SymMatrixd& m) {
    json out = json::array();
    for (Index i = 0; i < m.dim(); ++i)
        for (Index j = 0; j < m.dim(); ++j) out.push_back(m(i, j));
    return out;
}

json vector_to_json(const Vecd& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

const json& field(const json& doc, const char* name) {
    auto it = doc.find(name);
    if (it == doc.end()) throw FormatError(std::string("state is missing field \"") + name + "\"");
    return *it;
}

double number_field(const json& doc, const char* name) {
    const json& v = field(doc, name);
    if (!v.is_number()) throw FormatError(std::string("field \"") + name + "\" must be a number");
    return v.get<double>();
}

std::int64_t count_field(const json& doc, const char* name) {
    const json& v = field(doc, name);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw FormatError(std::string("field \"") + name + "\" must be a non-negative integer");
    return v.get<std::int64_t>();
}

Vecd vector_field(const json& doc, const char* name, Index expected) {
    const json& v = field(doc, name);
    if (!v.is_array()) throw FormatError(std::string("field \"") + name + "\" must be an array");
    if (static_cast<Index>(v.size()) != expected)
        throw FormatError(std::string("field \"") + name + "\" has " + std::to_string(v.size()) +
                          " entries, expected " + std::to_string(expected));
    Vecd out(expected);
    for (Index i = 0; i < expected; ++i) {
        if (!v[i].is_number())
            throw FormatError(std::string("field \"") + name + "\" has a non-numeric entry");
        out(i) = v[i].get<double>();
    }
    return out;
}

SymMatrixd matrix_field(const json& doc, const char* name, Index p) {
    const Vecd flat = vector_field(doc, name, p * p);
    const Matd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data(), p, p);
    if (m != m.transpose()) throw FormatError(std::string("field \"") + name + "\" is not symmetric");
    return SymMatrixd::from_lower(m);
}

const char* weight_mode_name(PaerWeight mode) {
    return mode == PaerWeight::FinalFraction ? "final_fraction" : "cumulative_fraction";
}

json envelope(const char* kind, ExpectileLevel tau, Index p, std::int64_t n_seen,
              std::int64_t batches_seen) {
    json doc;
    doc["format_version"] = kStateFormatVersion;
    if (kind) doc["kind"] = kind;
    doc["tau"] = tau.value();
    doc["p"] = p;
    doc["n_seen"] = n_seen;
    doc["batches_seen"] = batches_seen;
    return doc;
}

struct Visitor {
    json operator()(const SummaryStated& s) const {
        json doc = envelope(nullptr, s.tau(), s.dim(), s.n_seen, s.batches_seen);
        doc["beta"] = vector_to_json(s.beta.beta());
        doc["h"] = matrix_to_json(s.h);
        return doc;
    }
    json operator()(const PaerStated& s) const {
        json doc = envelope("paer", s.tau, s.dim(), s.n_seen, s.batches_seen);
        doc["weight_mode"] = weight_mode_name(s.weight_mode);
        doc["acc_mat"] = matrix_to_json(s.acc_mat);
        doc["acc_vec"] = vector_to_json(s.acc_vec);
        return doc;
    }
    json operator()(const DcerStated& s) const {
        json doc = envelope("dcer", s.tau, s.dim(), s.n_seen, s.batches_seen);
        doc["acc_mat"] = matrix_to_json(s.acc_mat);
        doc["acc_vec"] = vector_to_json(s.acc_vec);
        return doc;
    }
};

AnyState from_json(const json& doc) {
    if (!doc.is_object()) throw FormatError("state document must be a JSON object");
    const json& version = field(doc, "format_version");
    if (!version.is_number_integer() || version.get<long long>() != kStateFormatVersion)
        throw FormatError("unsupported state format_version " + version.dump() + " (expected " +
                          std::to_string(kStateFormatVersion) + ")");

    std::string kind = "reer";
    if (auto it = doc.find("kind"); it != doc.end()) {
        if (!it->is_string()) throw FormatError("field \"kind\" must be a string");
        kind = it->get<std::string>();
    }

    const double tau_raw = number_field(doc, "tau");
    if (!(tau_raw > 0.0 && tau_raw < 1.0)) throw FormatError("field \"tau\" must lie in (0, 1)");
    const ExpectileLevel tau(tau_raw);
    const std::int64_t p = count_field(doc, "p");
    if (p < 1) throw FormatError("field \"p\" must be >= 1");
    const std::int64_t n_seen = count_field(doc, "n_seen");
    const std::int64_t batches_seen = count_field(doc, "batches_seen");
    if (n_seen < batches_seen) throw FormatError("n_seen is smaller than batches_seen");

    if (kind == "reer") {
        if (batches_seen < 1) throw FormatError("ReER state must have seen at least one batch");
        const Vecd beta = vector_field(doc, "beta", p);
        if (!beta.allFinite()) throw FormatError("field \"beta\" has non-finite entries");
        return SummaryStated{matrix_field(doc, "h", p), Coefficientsd(beta, tau), n_seen, batches_seen};
    }
    if (kind == "paer") {
        PaerWeight mode = PaerWeight::FinalFraction;
        const std::string name = field(doc, "weight_mode").get<std::string>();
        if (name == "cumulative_fraction")
            mode = PaerWeight::CumulativeFraction;
        else if (name != "final_fraction")
            throw FormatError("unknown PAER weight_mode \"" + name + "\"");
        return PaerStated{matrix_field(doc, "acc_mat", p), vector_field(doc, "acc_vec", p), n_seen,
                          batches_seen, tau, mode};
    }
    if (kind == "dcer") {
        return DcerStated{matrix_field(doc, "acc_mat", p), vector_field(doc, "acc_vec", p), n_seen,
                          batches_seen, tau};
    }
    throw FormatError("unknown state kind \"" + kind + "\"");
}

}  // namespace

std::string state_kind(const AnyState& state) {
    static constexpr const char* names[] = {"reer", "paer", "dcer"};
    return names[state.index()];
}

Index state_dim(const AnyState& state) {
    return std::visit([](const auto& s) { return s.dim(); }, state);
}

ExpectileLevel state_tau(const AnyState& state) {
    return std::visit(
        [](const auto& s) -> ExpectileLevel {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SummaryStated>)
                return s.tau();
            else
                return s.tau;
        },
        state);
}

Coefficientsd state_estimate(const AnyState& state) {
    if (const auto* s = std::get_if<SummaryStated>(&state)) return current_estimate(*s);
    if (const auto* s = std::get_if<PaerStated>(&state)) return paer_finalize(*s);
    return dcer_finalize(std::get<DcerStated>(state));
}

std::string dump_state(const AnyState& state) {
    return std::visit(Visitor{}, state).dump(2) + "\n";
}

AnyState parse_state(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("state is not valid JSON: ") + e.what());
    }
    try {
        return from_json(doc);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed state: ") + e.what());
    }
}

void save_state(const AnyState& state, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << dump_state(state);
    if (!out) throw Error("failed writing " + path.string());
}

AnyState load_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_state(buf.str());
}

}  // namespace reer
