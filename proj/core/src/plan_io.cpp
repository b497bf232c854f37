#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ddt/checkpoint.hpp"
#include "ddt/config.hpp"
#include "ddt/sharesched.hpp"

namespace ddt {

namespace {

std::string num(double v) { return std::isnan(v) ? "nan" : format_double(v); }

}  // namespace

std::string similarity_checksum(const SimilarityMatrix& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::uint64_t word) {
        for (int b = 0; b < 8; ++b) {
            h ^= (word >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    feed(s.n);
    for (double v : s.values) {
        feed(std::bit_cast<std::uint64_t>(v));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_similarity(const SimilarityMatrix& s, const std::string& comment) {
    std::ostringstream os;
    os << "# ddt similarity matrix\n";
    if (!comment.empty()) {
        std::istringstream lines(comment);
        for (std::string line; std::getline(lines, line);) {
            os << "# " << line << '\n';
        }
    }
    os << s.n << '\n';
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = 0; j < s.n; ++j) {
            os << (j ? " " : "") << num(s(i, j));
        }
        os << '\n';
    }
    return os.str();
}

SimilarityMatrix parse_similarity(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream body;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line[0] == '#') continue;
        body << line << '\n';
    }
    std::istringstream values(body.str());
    long long n = 0;
    if (!(values >> n) || n <= 0) {
        throw FormatError("similarity file: missing or invalid N");
    }
    SimilarityMatrix s(static_cast<std::size_t>(n));
    for (double& v : s.values) {
        if (!(values >> v)) {
            throw FormatError("similarity file: expected " + std::to_string(n * n) + " values");
        }
    }
    std::string extra;
    if (values >> extra) {
        throw FormatError("similarity file: trailing data '" + extra + "'");
    }
    return s;
}

std::string format_plan(const SharingPlan& plan, const std::string& s_checksum) {
    std::ostringstream os;
    os << "# ddt sharing plan\n";
    os << "N=" << plan.n << '\n';
    os << "K=" << plan.k << '\n';
    os << "sharing_ratio=" << num(plan.sharing_ratio()) << '\n';
    os << "strategy=" << plan.strategy << '\n';
    os << "s_checksum=" << (s_checksum.empty() ? "none" : s_checksum) << '\n';
    os << "utility=" << (std::isnan(plan.utility) ? std::string("nan") : num(plan.utility)) << '\n';
    os << "anchors=";
    for (std::size_t a = 0; a < plan.anchors.size(); ++a) {
        os << (a ? " " : "") << plan.anchors[a];
    }
    os << '\n';
    return os.str();
}

SharingPlan parse_plan(const std::string& text) {
    KeyValues kv;
    try {
        kv = parse_key_values(text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("plan file: ") + e.what());
    }
    for (const char* key : {"N", "K", "strategy", "anchors"}) {
        if (!kv.count(key)) {
            throw FormatError(std::string("plan file: missing '") + key + "'");
        }
    }
    SharingPlan plan;
    try {
        plan.n = static_cast<std::size_t>(kv_int(kv, "N"));
        plan.k = static_cast<std::size_t>(kv_int(kv, "K"));
    } catch (const std::exception& e) {
        throw FormatError(std::string("plan file: ") + e.what());
    }
    plan.strategy = kv.at("strategy");
    plan.utility = std::numeric_limits<double>::quiet_NaN();
    if (auto it = kv.find("utility"); it != kv.end() && it->second != "nan") {
        plan.utility = std::strtod(it->second.c_str(), nullptr);
    }
    std::istringstream anchors(kv.at("anchors"));
    for (std::string tok; anchors >> tok;) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(tok, &used);
            if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
            plan.anchors.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw FormatError("plan file: bad anchor '" + tok + "'");
        }
    }
    try {
        plan.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("plan file: ") + e.what());
    }
    return plan;
}

}  // namespace ddt
