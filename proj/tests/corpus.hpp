#pragma once

// Annotated netlist corpus. The first line of every file states the
// expected outcome:
//   # expect: ok                 parses, builds and validates
//   # expect-error: line N       ParseError reported at line N
//   # expect-error: floating     parses, incidence construction rejects it

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ebfc/mna.hpp"

namespace ebfc::test {

struct CorpusResult {
    std::string file;
    bool expected_valid = false;
    bool ok = false;  ///< outcome matched the annotation
    std::string detail;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline CorpusResult check_corpus_file(const std::filesystem::path& p) {
    CorpusResult r;
    r.file = p.filename().string();
    const std::string text = slurp(p);
    const std::string head = text.substr(0, text.find('\n'));
    if (head.rfind("# expect: ok", 0) == 0) {
        r.expected_valid = true;
        try {
            const auto nl = parse_netlist(text);
            const auto sys = mna_system(build_incidence(nl));
            const auto rep = validate(sys);
            const auto again = parse_netlist(print_netlist(nl));
            if (!rep.ok) r.detail = "validate failed: " + rep.summary();
            else if (!(again == nl)) r.detail = "round-trip changed the netlist";
            else if (print_netlist(again) != print_netlist(nl)) r.detail = "printing is not idempotent";
            else r.ok = true;
        } catch (const std::exception& e) {
            r.detail = std::string("unexpected error: ") + e.what();
        }
        return r;
    }
    if (head.rfind("# expect-error: floating", 0) == 0) {
        try {
            const auto nl = parse_netlist(text);
            build_incidence(nl);
            r.detail = "accepted";
        } catch (const StructureError& e) {
            r.ok = std::string(e.what()).find("floating") != std::string::npos;
            if (!r.ok) r.detail = e.what();
        } catch (const std::exception& e) {
            r.detail = std::string("wrong error: ") + e.what();
        }
        return r;
    }
    const std::string tag = "# expect-error: line ";
    if (head.rfind(tag, 0) != 0) {
        r.detail = "missing annotation";
        return r;
    }
    const std::size_t line = std::stoul(head.substr(tag.size()));
    try {
        parse_netlist(text);
        r.detail = "accepted";
    } catch (const ParseError& e) {
        r.ok = e.line() == line && e.column() > 0;
        if (!r.ok) r.detail = "reported line " + std::to_string(e.line()) + " column " + std::to_string(e.column()) +
                              ", expected line " + std::to_string(line) + ": " + e.what();
    } catch (const std::exception& e) {
        r.detail = std::string("wrong error: ") + e.what();
    }
    return r;
}

inline std::vector<CorpusResult> check_corpus(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> files;
    for (const char* sub : {"valid", "invalid"})
        for (const auto& e : std::filesystem::directory_iterator(root / sub))
            if (e.path().extension() == ".cir") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<CorpusResult> out;
    for (const auto& f : files) out.push_back(check_corpus_file(f));
    return out;
}

}  // namespace ebfc::test
