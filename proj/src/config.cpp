#include "trfs/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace trfs {

void RunConfig::validate() const {
    trfs_config().validate(); // channels/heads/scales/mlp_ratio rules
    if (image_size < 32 || image_size % 8 != 0)
        throw ConfigError("config: image_size must be >= 32 and divisible by 8");
    if (scales.front() > image_size / 8)
        throw ConfigError("config: largest scale exceeds feature resolution");
    if (mode != "gem" && mode != "lem" && mode != "both")
        throw ConfigError("config: mode must be gem, lem, or both");
    if (precision != "fast" && precision != "reference")
        throw ConfigError("config: precision must be fast or reference");
    if (k_shot < 1) throw ConfigError("config: k_shot must be >= 1");
    if (fold < 0 || fold > 3) throw ConfigError("config: fold must be 0..3");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (n_eval_episodes < 1)
        throw ConfigError("config: n_eval_episodes must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("config: base_lr must be positive");
}

BranchMode RunConfig::branch_mode() const {
    if (mode == "gem") return BranchMode::GemOnly;
    if (mode == "lem") return BranchMode::LemOnly;
    return BranchMode::Both;
}

Precision RunConfig::precision_enum() const {
    return precision == "fast" ? Precision::Fast : Precision::Reference;
}

TrfsConfig RunConfig::trfs_config() const {
    TrfsConfig cfg;
    cfg.channels = channels;
    cfg.heads = heads;
    cfg.mlp_ratio = mlp_ratio;
    cfg.depth = depth;
    cfg.scales = scales;
    cfg.mode = branch_mode();
    cfg.precision = precision_enum();
    return cfg;
}

TrainHyper RunConfig::train_hyper() const {
    TrainHyper h;
    h.base_lr = base_lr;
    h.total_steps = total_steps;
    return h;
}

std::string RunConfig::canonical_text() const {
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(seed);
    kv["image_size"] = std::to_string(image_size);
    kv["channels"] = std::to_string(channels);
    kv["heads"] = std::to_string(heads);
    kv["mlp_ratio"] = std::to_string(mlp_ratio);
    kv["depth"] = std::to_string(depth);
    std::string s;
    for (std::size_t i = 0; i < scales.size(); ++i)
        s += (i ? "," : "") + std::to_string(scales[i]);
    kv["scales"] = s;
    kv["mode"] = mode;
    kv["k_shot"] = std::to_string(k_shot);
    {
        std::ostringstream lr;
        lr.precision(17);
        lr << base_lr;
        kv["base_lr"] = lr.str();
    }
    kv["total_steps"] = std::to_string(total_steps);
    kv["batch_size"] = std::to_string(batch_size);
    kv["precision"] = precision;
    kv["fold"] = std::to_string(fold);
    kv["n_eval_episodes"] = std::to_string(n_eval_episodes);

    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out; // out_dir deliberately excluded: it does not affect results
}

std::string RunConfig::fingerprint() const {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_text()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

namespace {
std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::size_t> parse_scales(const std::string& v) {
    std::vector<std::size_t> out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(std::stoul(item));
    return out;
}

void set_field(RunConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "image_size") cfg.image_size = std::stoul(value);
        else if (key == "channels") cfg.channels = std::stoul(value);
        else if (key == "heads") cfg.heads = std::stoul(value);
        else if (key == "mlp_ratio") cfg.mlp_ratio = std::stoul(value);
        else if (key == "depth") cfg.depth = std::stoul(value);
        else if (key == "scales") cfg.scales = parse_scales(value);
        else if (key == "mode") cfg.mode = value;
        else if (key == "k_shot") cfg.k_shot = std::stoul(value);
        else if (key == "base_lr") cfg.base_lr = std::stod(value);
        else if (key == "total_steps") cfg.total_steps = std::stoul(value);
        else if (key == "batch_size") cfg.batch_size = std::stoul(value);
        else if (key == "precision") cfg.precision = value;
        else if (key == "fold") cfg.fold = std::stoi(value);
        else if (key == "n_eval_episodes") cfg.n_eval_episodes = std::stoul(value);
        else if (key == "out_dir") cfg.out_dir = value;
        else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("config: bad value for '" + key + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("config: value out of range for '" + key + "'");
    }
}
} // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const std::size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const std::size_t e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value, got '" + line + "'");
        set_field(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override must be key=value");
    set_field(cfg, trim(assignment.substr(0, eq)),
              trim(assignment.substr(eq + 1)));
}

} // namespace trfs
