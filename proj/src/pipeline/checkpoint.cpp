#include "navkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "navkd/errors.hpp"

namespace navkd {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'V', 'L', 'N'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
   public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::string& buffer() { return buf_; }

   private:
    std::string buf_;
};

class Reader {
   public:
    explicit Reader(std::string_view data) : data_(data) {}
    template <typename T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    void take(void* out, std::size_t n) {
        if (pos_ + n > data_.size()) throw ChecksumError("checkpoint ends early");
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t remaining() const { return data_.size() - pos_; }

   private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Validates magic and checksum; returns the payload without the checksum.
std::string_view verified_body(const std::string& file, const std::filesystem::path& path) {
    if (file.size() < sizeof(kMagic) + 4 + 8 + 4 + 8) throw ChecksumError("checkpoint " + path.string() + " is truncated");
    if (std::memcmp(file.data(), kMagic, 4) != 0) throw FormatError(path.string() + " is not a checkpoint");
    const std::size_t body = file.size() - 8;
    std::uint64_t stored;
    std::memcpy(&stored, file.data() + body, 8);
    if (stored != fnv1a(file.data(), body)) throw ChecksumError("checksum mismatch in " + path.string());
    return std::string_view(file).substr(0, body);
}

}  // namespace

void save_parameters(const ParameterSet& params, std::uint64_t digest, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(digest);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params.items()) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape()) w.put<std::uint64_t>(d);
        w.bytes(p.tensor.data(), p.tensor.numel() * sizeof(double));
    }
    const std::uint64_t sum = fnv1a(w.buffer().data(), w.buffer().size());
    w.put<std::uint64_t>(sum);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) throw std::runtime_error("failed to write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void load_parameters(ParameterSet& params, std::uint64_t digest, const std::filesystem::path& path) {
    const std::string file = read_file(path);
    Reader r(verified_body(file, path));
    char magic[4];
    r.take(magic, 4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
    const auto stored_digest = r.get<std::uint64_t>();
    if (stored_digest != digest)
        throw ConfigDigestMismatch("checkpoint " + path.string() + " was written for a different model config");
    const auto count = r.get<std::uint32_t>();

    std::unordered_map<std::string, std::vector<double>> values;
    std::unordered_map<std::string, Shape> shapes;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(r.get<std::uint32_t>(), '\0');
        r.take(name.data(), name.size());
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint64_t>();
        std::vector<double> v(numel_of(shape));
        r.take(v.data(), v.size() * sizeof(double));
        shapes[name] = shape;
        values[name] = std::move(v);
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint " + path.string());
    if (values.size() != params.size())
        throw FormatError("checkpoint holds " + std::to_string(values.size()) + " tensors, expected " +
                          std::to_string(params.size()));
    for (auto& p : params.items()) {
        auto it = values.find(p.name);
        if (it == values.end()) throw FormatError("checkpoint lacks parameter " + p.name);
        if (shapes[p.name] != p.tensor.shape())
            throw ShapeError("parameter " + p.name + " has shape " + to_string(shapes[p.name]) + " in the checkpoint");
        std::copy(it->second.begin(), it->second.end(), p.tensor.mutable_values().begin());
    }
}

void save_checkpoint(const DuetModel& model, const std::filesystem::path& path) {
    save_parameters(model.parameters(), config_digest(model.config()), path);
}

DuetModel load_checkpoint(const ModelConfig& cfg, const std::filesystem::path& path) {
    DuetModel model(cfg, 0);
    load_checkpoint_into(model, path);
    return model;
}

void load_checkpoint_into(DuetModel& model, const std::filesystem::path& path) {
    load_parameters(model.parameters(), config_digest(model.config()), path);
}

std::uint64_t checkpoint_digest(const std::filesystem::path& path) {
    const std::string file = read_file(path);
    Reader r(verified_body(file, path));
    char magic[4];
    r.take(magic, 4);
    r.get<std::uint32_t>();
    return r.get<std::uint64_t>();
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    const std::string file = read_file(path);
    return fnv1a(file.data(), file.size());
}

}  // namespace navkd
