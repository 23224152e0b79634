#include "scatgate/toml_lite.hpp"

#include "scatgate/error.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace scatgate::config {

using nlohmann::json;

namespace {

class LineParser {
public:
    LineParser(const std::string& s, int lineno) : s_(s), lineno_(lineno) {}

    [[noreturn]] void error(const std::string& msg) const {
        fail(ErrorKind::InvalidArgument,
             "toml line " + std::to_string(lineno_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#' || s_[pos_] == '\r';
    }

    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

    void expect(char c) {
        skip_ws();
        if (peek() != c) error(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string key() {
        skip_ws();
        if (peek() == '"') return basic_string();
        const auto start = pos_;
        while (pos_ < s_.size() &&
               (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
            ++pos_;
        if (start == pos_) error("expected a key");
        return s_.substr(start, pos_ - start);
    }

    std::vector<std::string> dotted_key() {
        std::vector<std::string> parts{key()};
        skip_ws();
        while (peek() == '.') {
            ++pos_;
            parts.push_back(key());
            skip_ws();
        }
        return parts;
    }

    std::string basic_string() {
        expect('"');
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) error("dangling escape");
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '\\': c = '\\'; break;
                    case '"': c = '"'; break;
                    default: error(std::string("unsupported escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) error("unterminated string");
        ++pos_;
        return out;
    }

    json value() {
        skip_ws();
        const char c = peek();
        if (c == '"') return basic_string();
        if (c == '[') {
            ++pos_;
            json arr = json::array();
            skip_ws();
            if (peek() == ']') {
                ++pos_;
                return arr;
            }
            for (;;) {
                arr.push_back(value());
                skip_ws();
                if (peek() == ',') {
                    ++pos_;
                    skip_ws();
                    if (peek() == ']') {
                        ++pos_;
                        return arr;
                    }
                    continue;
                }
                if (peek() == ']') {
                    ++pos_;
                    return arr;
                }
                error("expected ',' or ']' in array");
            }
        }
        const auto start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' &&
               s_[pos_] != ' ' && s_[pos_] != '\t' && s_[pos_] != '\r')
            ++pos_;
        std::string tok = s_.substr(start, pos_ - start);
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string clean;
        for (char ch : tok)
            if (ch != '_') clean.push_back(ch);
        if (clean.empty()) error("expected a value");
        const bool is_float = clean.find_first_of(".eE") != std::string::npos ||
                              clean == "inf" || clean == "nan";
        try {
            std::size_t used = 0;
            if (is_float) {
                const double d = std::stod(clean, &used);
                if (used == clean.size()) return d;
            } else {
                const long long v = std::stoll(clean, &used);
                if (used == clean.size()) return v;
            }
        } catch (const std::exception&) {
        }
        error("cannot parse value '" + tok + "'");
    }

private:
    const std::string& s_;
    std::size_t pos_ = 0;
    int lineno_;
};

json& descend(json& root, const std::vector<std::string>& path, LineParser& p) {
    json* node = &root;
    for (const auto& part : path) {
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) p.error("key '" + part + "' is not a table");
    }
    return *node;
}

}  // namespace

json parse_toml(const std::string& text) {
    json root = json::object();
    json* table = &root;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        LineParser p(line, lineno);
        if (p.at_end_or_comment()) continue;
        if (p.peek() == '[') {
            p.expect('[');
            if (p.peek() == '[') p.error("arrays of tables are not supported");
            auto path = p.dotted_key();
            p.expect(']');
            if (!p.at_end_or_comment()) p.error("trailing characters after table header");
            table = &descend(root, path, p);
            continue;
        }
        auto path = p.dotted_key();
        p.expect('=');
        json v = p.value();
        if (!p.at_end_or_comment()) p.error("trailing characters after value");
        const std::string leaf = path.back();
        path.pop_back();
        json& target = descend(*table, path, p);
        if (target.contains(leaf)) p.error("duplicate key '" + leaf + "'");
        target[leaf] = std::move(v);
    }
    return root;
}

json load_toml(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_toml(ss.str());
}

}  // namespace scatgate::config
