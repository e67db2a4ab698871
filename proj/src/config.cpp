#include "latentuq/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace luq::cli {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

/// Strips an inline # comment, honoring double quotes.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

double parse_double(const std::string& token, const std::string& key) {
    double value = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("config key '" + key + "': '" + token + "' is not a number");
    return value;
}

std::uint64_t parse_u64(const std::string& token, const std::string& key) {
    std::uint64_t value = 0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("config key '" + key + "': '" + token +
                              "' is not an unsigned integer");
    return value;
}

long long parse_int(const std::string& token, const std::string& key) {
    long long value = 0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("config key '" + key + "': '" + token + "' is not an integer");
    return value;
}

bool parse_bool(const std::string& token, const std::string& key) {
    if (token == "true") return true;
    if (token == "false") return false;
    throw ValidationError("config key '" + key + "': expected true or false");
}

std::string parse_string(const std::string& token, const std::string& key) {
    if (token.size() < 2 || token.front() != '"' || token.back() != '"')
        throw ValidationError("config key '" + key + "': expected a quoted string");
    return token.substr(1, token.size() - 2);
}

std::vector<std::string> parse_array(const std::string& token, const std::string& key) {
    if (token.size() < 2 || token.front() != '[' || token.back() != ']')
        throw ValidationError("config key '" + key + "': expected an array [..]");
    std::vector<std::string> items;
    std::string inner = token.substr(1, token.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

std::string fmt_double(double v) {
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

using Setter = std::function<void(RunConfig&, const std::string& token, const std::string& key)>;

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = [] {
        std::map<std::string, Setter> m;
        auto str = [](std::string DataConfig::* field) {
            return [field](RunConfig& c, const std::string& t, const std::string& k) {
                c.data.*field = parse_string(t, k);
            };
        };
        m["data.source"] = str(&DataConfig::source);
        m["data.train_images"] = str(&DataConfig::train_images);
        m["data.train_labels"] = str(&DataConfig::train_labels);
        m["data.test_images"] = str(&DataConfig::test_images);
        m["data.test_labels"] = str(&DataConfig::test_labels);
        m["data.classes"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.classes = static_cast<int>(parse_int(t, k));
        };
        m["data.dim"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.dim = static_cast<int>(parse_int(t, k));
        };
        m["data.train_per_class"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.train_per_class = static_cast<int>(parse_int(t, k));
        };
        m["data.test_per_class"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.test_per_class = static_cast<int>(parse_int(t, k));
        };
        m["data.separation"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.separation = parse_double(t, k);
        };
        m["data.seed"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.data.seed = parse_u64(t, k);
        };

        m["network.hidden_widths"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.network.hidden_widths.clear();
            for (const std::string& item : parse_array(t, k))
                c.network.hidden_widths.push_back(
                    static_cast<std::size_t>(parse_u64(item, k)));
        };
        m["network.dropout"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.network.dropout = parse_double(t, k);
        };

        m["training.batch_size"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.training.batch_size = static_cast<std::size_t>(parse_u64(t, k));
        };
        m["training.learning_rate"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.training.learning_rate = parse_double(t, k);
        };
        m["training.max_epochs"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.training.max_epochs = static_cast<std::size_t>(parse_u64(t, k));
        };
        m["training.early_stop_accuracy"] = [](RunConfig& c, const std::string& t,
                                               const std::string& k) {
            c.training.early_stop_accuracy = parse_double(t, k);
        };
        m["training.seed"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.training.seed = parse_u64(t, k);
        };

        m["inference.enabled"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.enabled = parse_bool(t, k);
        };
        m["inference.alphas"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.alphas.clear();
            for (const std::string& item : parse_array(t, k))
                c.inference.alphas.push_back(parse_double(item, k));
        };
        m["inference.betas"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.betas.clear();
            for (const std::string& item : parse_array(t, k))
                c.inference.betas.push_back(parse_double(item, k));
        };
        m["inference.threshold"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.threshold = parse_double(t, k);
        };
        m["inference.ridge_scale"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.ridge_scale = parse_double(t, k);
        };
        m["inference.smoothstep"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.inference.smoothstep = parse_string(t, k);
        };

        m["mc_dropout.enabled"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.mc_dropout.enabled = parse_bool(t, k);
        };
        m["mc_dropout.passes"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.mc_dropout.passes = static_cast<std::size_t>(parse_u64(t, k));
        };
        m["mc_dropout.threshold"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.mc_dropout.threshold = parse_double(t, k);
        };
        m["mc_dropout.seed"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.mc_dropout.seed = parse_u64(t, k);
        };

        m["ensemble.enabled"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.ensemble.enabled = parse_bool(t, k);
        };
        m["ensemble.members"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.ensemble.members = static_cast<std::size_t>(parse_u64(t, k));
        };
        m["ensemble.threshold"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.ensemble.threshold = parse_double(t, k);
        };
        m["ensemble.base_seed"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.ensemble.base_seed = parse_u64(t, k);
        };

        m["run.held_out_labels"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.run.held_out_labels.clear();
            for (const std::string& item : parse_array(t, k))
                c.run.held_out_labels.push_back(static_cast<int>(parse_int(item, k)));
        };
        m["run.workers"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.run.workers = static_cast<unsigned>(parse_u64(t, k));
        };
        m["run.histogram_bins"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.run.histogram_bins = static_cast<std::size_t>(parse_u64(t, k));
        };
        m["run.export_scores"] = [](RunConfig& c, const std::string& t, const std::string& k) {
            c.run.export_scores = parse_bool(t, k);
        };
        return m;
    }();
    return s;
}

void validate(const RunConfig& c) {
    if (c.data.source != "idx" && c.data.source != "synthetic")
        throw ValidationError("data.source must be \"idx\" or \"synthetic\"");
    if (c.data.source == "idx") {
        if (c.data.train_images.empty()) throw ValidationError("data.train_images is required");
        if (c.data.train_labels.empty()) throw ValidationError("data.train_labels is required");
        if (c.data.test_images.empty()) throw ValidationError("data.test_images is required");
        if (c.data.test_labels.empty()) throw ValidationError("data.test_labels is required");
    } else {
        if (c.data.classes < 2) throw ValidationError("data.classes must be >= 2");
        if (c.data.dim < 1) throw ValidationError("data.dim must be >= 1");
        if (c.data.train_per_class < 1)
            throw ValidationError("data.train_per_class must be >= 1");
        if (c.data.test_per_class < 1) throw ValidationError("data.test_per_class must be >= 1");
        if (c.data.separation < 0.0) throw ValidationError("data.separation must be >= 0");
        if (!c.data.seed) throw ValidationError("data.seed is required for synthetic data");
    }

    if (c.network.hidden_widths.empty())
        throw ValidationError("network.hidden_widths must name at least one layer");
    for (std::size_t w : c.network.hidden_widths)
        if (w < 1) throw ValidationError("network.hidden_widths entries must be >= 1");
    if (!(c.network.dropout >= 0.0 && c.network.dropout < 1.0))
        throw ValidationError("network.dropout must lie in [0, 1)");

    if (c.training.batch_size < 1) throw ValidationError("training.batch_size must be >= 1");
    if (!(c.training.learning_rate > 0.0))
        throw ValidationError("training.learning_rate must be > 0");
    if (!(c.training.early_stop_accuracy > 0.0 && c.training.early_stop_accuracy <= 1.0))
        throw ValidationError("training.early_stop_accuracy must lie in (0, 1]");
    if (!c.training.seed) throw ValidationError("training.seed is required");

    if (c.inference.alphas.size() != c.inference.betas.size())
        throw ValidationError("inference.betas must pair one beta with each of "
                              "inference.alphas");
    for (std::size_t i = 0; i < c.inference.alphas.size(); ++i) {
        const double a = c.inference.alphas[i];
        const double b = c.inference.betas[i];
        if (!(a >= 0.0 && a <= 100.0))
            throw ValidationError("inference.alphas[" + std::to_string(i) +
                                  "] must lie in [0, 100]");
        if (!(b >= a && b <= 100.0))
            throw ValidationError("inference.betas[" + std::to_string(i) +
                                  "] must lie in [alpha, 100]");
    }
    if (!(c.inference.threshold >= 0.0 && c.inference.threshold <= 1.0))
        throw ValidationError("inference.threshold must lie in [0, 1]");
    if (c.inference.ridge_scale < 0.0)
        throw ValidationError("inference.ridge_scale must be >= 0");
    if (c.inference.smoothstep != "corrected" && c.inference.smoothstep != "literal")
        throw ValidationError("inference.smoothstep must be \"corrected\" or \"literal\"");

    if (c.mc_dropout.passes < 1) throw ValidationError("mc_dropout.passes must be >= 1");
    if (!(c.mc_dropout.threshold >= 0.0 && c.mc_dropout.threshold <= 1.0))
        throw ValidationError("mc_dropout.threshold must lie in [0, 1]");
    if (c.mc_dropout.enabled && !c.mc_dropout.seed)
        throw ValidationError("mc_dropout.seed is required when mc_dropout.enabled");

    if (c.ensemble.members < 2) throw ValidationError("ensemble.members must be >= 2");
    if (!(c.ensemble.threshold >= 0.0 && c.ensemble.threshold <= 1.0))
        throw ValidationError("ensemble.threshold must lie in [0, 1]");
    if (c.ensemble.enabled && !c.ensemble.base_seed)
        throw ValidationError("ensemble.base_seed is required when ensemble.enabled");

    for (int l : c.run.held_out_labels)
        if (l < 0) throw ValidationError("run.held_out_labels entries must be >= 0");
    if (c.run.workers < 1) throw ValidationError("run.workers must be >= 1");
    if (c.run.histogram_bins < 1) throw ValidationError("run.histogram_bins must be >= 1");
}

} // namespace

RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::string section;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            static const char* kSections[] = {"data",       "network",  "training", "inference",
                                              "mc_dropout", "ensemble", "run"};
            if (std::find_if(std::begin(kSections), std::end(kSections), [&](const char* s) {
                    return section == s;
                }) == std::end(kSections))
                throw ValidationError("unknown config section '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError("config line " + std::to_string(line_no) + ": empty key or value");
        if (section.empty())
            throw ParseError("config line " + std::to_string(line_no) +
                             ": key outside any section");
        const std::string qualified = section + "." + key;
        const auto it = schema().find(qualified);
        if (it == schema().end())
            throw ValidationError("unknown config key '" + qualified + "'");
        it->second(cfg, value, qualified);
    }
    validate(cfg);
    return cfg;
}

RunConfig parse_config(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file " + path.string());
    return parse_config(in);
}

std::string render_config(const RunConfig& c) {
    std::ostringstream out;
    auto arr_d = [](const std::vector<double>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? ", " : "") + fmt_double(v[i]);
        return s + "]";
    };

    out << "[data]\n";
    out << "source = \"" << c.data.source << "\"\n";
    if (c.data.source == "idx") {
        out << "train_images = \"" << c.data.train_images << "\"\n";
        out << "train_labels = \"" << c.data.train_labels << "\"\n";
        out << "test_images = \"" << c.data.test_images << "\"\n";
        out << "test_labels = \"" << c.data.test_labels << "\"\n";
    } else {
        out << "classes = " << c.data.classes << "\n";
        out << "dim = " << c.data.dim << "\n";
        out << "train_per_class = " << c.data.train_per_class << "\n";
        out << "test_per_class = " << c.data.test_per_class << "\n";
        out << "separation = " << fmt_double(c.data.separation) << "\n";
        if (c.data.seed) out << "seed = " << *c.data.seed << "\n";
    }

    out << "\n[network]\n";
    out << "hidden_widths = [";
    for (std::size_t i = 0; i < c.network.hidden_widths.size(); ++i)
        out << (i ? ", " : "") << c.network.hidden_widths[i];
    out << "]\n";
    out << "dropout = " << fmt_double(c.network.dropout) << "\n";

    out << "\n[training]\n";
    out << "batch_size = " << c.training.batch_size << "\n";
    out << "learning_rate = " << fmt_double(c.training.learning_rate) << "\n";
    out << "max_epochs = " << c.training.max_epochs << "\n";
    out << "early_stop_accuracy = " << fmt_double(c.training.early_stop_accuracy) << "\n";
    if (c.training.seed) out << "seed = " << *c.training.seed << "\n";

    out << "\n[inference]\n";
    out << "enabled = " << (c.inference.enabled ? "true" : "false") << "\n";
    out << "alphas = " << arr_d(c.inference.alphas) << "\n";
    out << "betas = " << arr_d(c.inference.betas) << "\n";
    out << "threshold = " << fmt_double(c.inference.threshold) << "\n";
    out << "ridge_scale = " << fmt_double(c.inference.ridge_scale) << "\n";
    out << "smoothstep = \"" << c.inference.smoothstep << "\"\n";

    out << "\n[mc_dropout]\n";
    out << "enabled = " << (c.mc_dropout.enabled ? "true" : "false") << "\n";
    out << "passes = " << c.mc_dropout.passes << "\n";
    out << "threshold = " << fmt_double(c.mc_dropout.threshold) << "\n";
    if (c.mc_dropout.seed) out << "seed = " << *c.mc_dropout.seed << "\n";

    out << "\n[ensemble]\n";
    out << "enabled = " << (c.ensemble.enabled ? "true" : "false") << "\n";
    out << "members = " << c.ensemble.members << "\n";
    out << "threshold = " << fmt_double(c.ensemble.threshold) << "\n";
    if (c.ensemble.base_seed) out << "base_seed = " << *c.ensemble.base_seed << "\n";

    out << "\n[run]\n";
    if (!c.run.held_out_labels.empty()) {
        out << "held_out_labels = [";
        for (std::size_t i = 0; i < c.run.held_out_labels.size(); ++i)
            out << (i ? ", " : "") << c.run.held_out_labels[i];
        out << "]\n";
    }
    out << "workers = " << c.run.workers << "\n";
    out << "histogram_bins = " << c.run.histogram_bins << "\n";
    out << "export_scores = " << (c.run.export_scores ? "true" : "false") << "\n";
    return out.str();
}

} // namespace luq::cli
