#include "moef/checkpoint.hpp"

#include "moef/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace moef {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(const std::string& data, std::string path)
        : data_(data), path_(std::move(path)) {}

    std::uint32_t u32(const char* field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64(const char* field) {
        need(8, field);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64(const char* field) { return std::bit_cast<double>(u64(field)); }

    std::string bytes(size_t n, const char* field) {
        need(n, field);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(size_t n, const char* field) {
        if (pos_ + n > data_.size()) {
            throw io_error("checkpoint '" + path_ + "' truncated while reading " + field);
        }
    }

    const std::string& data_;
    std::string path_;
    size_t pos_ = 0;
};

void put_array(std::string& out, const std::string& name, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u64(out, state.step);
    put_u64(out, state.rng_seed);
    const std::string config_text = serialize_config(state.config);
    put_u64(out, config_text.size());
    out.append(config_text);
    put_u32(out, static_cast<std::uint32_t>(state.params.size() + state.velocity.size()));
    for (const auto& [name, values] : state.params.items()) put_array(out, "param." + name, values);
    for (const auto& [name, values] : state.velocity) put_array(out, "vel." + name, values);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open checkpoint '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw io_error("failed writing checkpoint '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(data, path);
    const std::string magic = r.bytes(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw io_error("checkpoint '" + path + "' has wrong magic bytes");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw io_error("checkpoint '" + path + "' has unsupported version " +
                       std::to_string(version));
    }

    TrainState state;
    state.step = r.u64("step counter");
    state.rng_seed = r.u64("rng state");
    const std::uint64_t config_len = r.u64("config length");
    state.config = parse_config_text(r.bytes(config_len, "config"));

    const std::uint32_t count = r.u32("array count");
    std::map<std::string, Matrix> arrays;
    for (std::uint32_t a = 0; a < count; ++a) {
        const std::uint32_t name_len = r.u32("array name length");
        const std::string name = r.bytes(name_len, "array name");
        const std::uint64_t rows = r.u64("array rows");
        const std::uint64_t cols = r.u64("array cols");
        if (rows > (1u << 24) || cols > (1u << 24)) {
            throw io_error("checkpoint '" + path + "' array '" + name +
                           "' has an implausible shape");
        }
        Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
        for (Index i = 0; i < m.rows(); ++i)
            for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64("array payload");
        if (!arrays.emplace(name, std::move(m)).second) {
            throw io_error("checkpoint '" + path + "' has duplicate array '" + name + "'");
        }
    }
    if (!r.done()) {
        throw io_error("checkpoint '" + path + "' has trailing bytes");
    }

    // every parameter the embedded config implies must be present, exact shape
    Model expected(state.config.model);
    for (const auto& [name, values] : expected.params().items()) {
        const auto it = arrays.find("param." + name);
        if (it == arrays.end()) {
            throw io_error("checkpoint '" + path + "' is missing parameter '" + name + "'");
        }
        if (it->second.rows() != values.rows() || it->second.cols() != values.cols()) {
            throw io_error("checkpoint '" + path + "' parameter '" + name + "' has shape " +
                           std::to_string(it->second.rows()) + "x" +
                           std::to_string(it->second.cols()) + ", expected " +
                           std::to_string(values.rows()) + "x" + std::to_string(values.cols()));
        }
        state.params.add(name, it->second);
        arrays.erase(it);
    }
    for (auto& [name, values] : arrays) {
        if (name.rfind("vel.", 0) == 0) {
            state.velocity.emplace(name.substr(4), std::move(values));
        } else {
            throw io_error("checkpoint '" + path + "' has unexpected array '" + name + "'");
        }
    }
    return state;
}

}  // namespace moef
