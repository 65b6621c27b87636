#include "mcan/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mcan/errors.hpp"

namespace mcan {

namespace {

constexpr const char* kMagic = "mcan-checkpoint-v1";

void write_u64_le(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    for (double x : v) write_u64_le(out, std::bit_cast<std::uint64_t>(x));
}

void read_doubles(std::istream& in, std::vector<double>& v) {
    for (double& x : v) x = std::bit_cast<double>(read_u64_le(in));
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::map<std::string, std::string> config_fields(const ModelConfig& c, bool trainable_embeddings) {
    return {
        {"embed_dim", std::to_string(c.embed_dim)},
        {"encoder_width", std::to_string(c.encoder_width)},
        {"use_highway", c.use_highway ? "1" : "0"},
        {"use_lstm", c.use_lstm ? "1" : "0"},
        {"lstm_hidden", std::to_string(c.lstm_hidden)},
        {"head_width", std::to_string(c.head_width)},
        {"compression", compression_name(c.compression)},
        {"fm_factors", std::to_string(c.fm_factors)},
        {"affinity", affinity_name(c.affinity)},
        {"affinity_width", std::to_string(c.affinity_width)},
        {"dropout", fmt_double(c.dropout)},
        {"l2", fmt_double(c.l2)},
        {"casts", casts_to_string(c.casts)},
        {"max_len", std::to_string(c.max_len)},
        {"trainable_embeddings", trainable_embeddings ? "1" : "0"},
    };
}

std::string expect_line(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": truncated checkpoint");
    return line;
}

}  // namespace

std::string casts_to_string(const CastSet& casts) {
    std::string out;
    for (CastKind k : CastSet::order()) {
        if (!casts.enabled(k)) continue;
        if (!out.empty()) out += ",";
        out += cast_name(k);
    }
    return out.empty() ? "none" : out;
}

CastSet casts_from_string(const std::string& text) {
    CastSet set{false, false, false, false};
    if (text == "none" || text.empty()) return set;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        bool known = false;
        for (CastKind k : CastSet::order()) {
            if (item == cast_name(k)) {
                set.set(k, true);
                known = true;
            }
        }
        if (!known) throw UsageError("unknown cast name: " + item);
    }
    return set;
}

Compression compression_from_string(const std::string& text) {
    for (Compression c : {Compression::Sum, Compression::NN, Compression::FM}) {
        if (text == compression_name(c)) return c;
    }
    throw UsageError("unknown compression: " + text + " (expected sm, nn or fm)");
}

AffinityKind affinity_from_string(const std::string& text) {
    for (AffinityKind a : {AffinityKind::Factored, AffinityKind::Bilinear, AffinityKind::MlpConcat}) {
        if (text == affinity_name(a)) return a;
    }
    throw UsageError("unknown affinity form: " + text + " (expected factored, bilinear or mlp)");
}

void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);

    out << kMagic << "\n";
    const auto fields = config_fields(model.config(), model.embeddings().trainable);
    out << "config " << fields.size() << "\n";
    for (const auto& [k, v] : fields) out << k << " " << v << "\n";

    out << "vocab " << (vocab.size() - 2) << "\n";
    for (std::size_t id = 2; id < vocab.size(); ++id) out << vocab.token_of(id) << "\n";

    const auto& params = model.params().all();
    const bool table_in_params = model.params().has("embedding.table");
    out << "tensors " << (params.size() + (table_in_params ? 0 : 1)) << "\n";
    auto write_tensor = [&](const std::string& name, const TensorPtr& t) {
        out << name << " " << t->rank();
        for (std::size_t d : t->shape) out << " " << d;
        out << "\n";
        write_doubles(out, t->values);
        out << "\n";
    };
    if (!table_in_params) write_tensor("embedding.table", model.embeddings().matrix);
    for (const auto& [name, t] : params) write_tensor(name, t);
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    if (expect_line(in, path) != kMagic) throw DataError(path + ": not a checkpoint file");

    std::istringstream header(expect_line(in, path));
    std::string tag;
    std::size_t count = 0;
    header >> tag >> count;
    if (tag != "config") throw DataError(path + ": missing config section");

    std::map<std::string, std::string> fields;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream fl(expect_line(in, path));
        std::string key, value;
        fl >> key >> value;
        fields[key] = value;
    }
    auto field = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw DataError(path + ": config field missing: " + key);
        return it->second;
    };

    ModelConfig config;
    config.embed_dim = std::stoul(field("embed_dim"));
    config.encoder_width = std::stoul(field("encoder_width"));
    config.use_highway = field("use_highway") == "1";
    config.use_lstm = field("use_lstm") == "1";
    config.lstm_hidden = std::stoul(field("lstm_hidden"));
    config.head_width = std::stoul(field("head_width"));
    config.compression = compression_from_string(field("compression"));
    config.fm_factors = std::stoul(field("fm_factors"));
    config.affinity = affinity_from_string(field("affinity"));
    config.affinity_width = std::stoul(field("affinity_width"));
    config.dropout = std::stod(field("dropout"));
    config.l2 = std::stod(field("l2"));
    config.casts = casts_from_string(field("casts"));
    config.max_len = std::stoul(field("max_len"));
    const bool trainable = field("trainable_embeddings") == "1";

    std::istringstream vh(expect_line(in, path));
    std::size_t vocab_count = 0;
    vh >> tag >> vocab_count;
    if (tag != "vocab") throw DataError(path + ": missing vocab section");
    Vocabulary vocab;
    for (std::size_t i = 0; i < vocab_count; ++i) vocab.add(expect_line(in, path));

    std::istringstream th(expect_line(in, path));
    std::size_t tensor_count = 0;
    th >> tag >> tensor_count;
    if (tag != "tensors") throw DataError(path + ": missing tensors section");

    std::map<std::string, TensorPtr> tensors;
    for (std::size_t i = 0; i < tensor_count; ++i) {
        std::istringstream hl(expect_line(in, path));
        std::string name;
        std::size_t rank = 0;
        hl >> name >> rank;
        Shape shape(rank);
        for (std::size_t d = 0; d < rank; ++d) hl >> shape[d];
        if (name.empty() || rank == 0 || !hl) throw DataError(path + ": bad tensor header");
        std::vector<double> values(numel(shape));
        read_doubles(in, values);
        expect_line(in, path);  // trailing newline after the raw block
        if (!in) throw DataError(path + ": truncated tensor data for " + name);
        tensors.emplace(name, Tensor::make(shape, std::move(values), false));
    }

    auto table_it = tensors.find("embedding.table");
    if (table_it == tensors.end()) throw DataError(path + ": embedding table missing");
    EmbeddingTable emb;
    emb.dim = table_it->second->shape[1];
    emb.trainable = trainable;
    emb.matrix = Tensor::make(table_it->second->shape, table_it->second->values, trainable);

    Rng scratch(0);  // every value is overwritten below
    auto model = std::make_unique<Model>(config, std::move(emb), scratch);
    for (const auto& [name, t] : model->params().all()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError(path + ": tensor missing: " + name);
        if (it->second->shape != t->shape) {
            throw DataError(path + ": tensor shape mismatch for " + name + ": " +
                            shape_str(it->second->shape) + " vs " + shape_str(t->shape));
        }
        t->values = it->second->values;
    }
    if (model->params().tensor_count() + (model->params().has("embedding.table") ? 0u : 1u) !=
        tensors.size()) {
        throw DataError(path + ": checkpoint carries unknown tensors");
    }

    LoadedCheckpoint loaded;
    loaded.config = config;
    loaded.vocab = std::move(vocab);
    loaded.model = std::move(model);
    return loaded;
}

}  // namespace mcan
