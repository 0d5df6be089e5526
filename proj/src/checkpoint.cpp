#include "emma/checkpoint.hpp"

#include <map>

#include "emma/dataset_io.hpp"
#include "emma/digest.hpp"

namespace emma {

namespace {
constexpr char kMagic[9] = "EMMACKPT";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<unsigned char> out;
    put_bytes(out, kMagic, 8);
    put_u32(out, kVersion);
    put_string(out, ckpt.config_text);
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        put_string(out, name);
        put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
        for (int e : tensor.shape()) put_i32(out, e);
        for (float v : tensor.data()) put_f32(out, v);
    }
    put_u64(out, fnv1a64(out.data(), out.size()));
    write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8 + 4 + 8)
        throw FormatError("file too short to be a checkpoint (" + std::to_string(bytes.size()) +
                          " bytes)");
    const std::uint64_t stored = [&] {
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[bytes.size() - 8 + static_cast<std::size_t>(i)];
        return v;
    }();
    const std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != actual)
        throw FormatError("checksum mismatch at byte offset " + std::to_string(bytes.size() - 8) +
                          ": stored " + hex_digest(stored) + ", computed " + hex_digest(actual));

    ByteReader r(bytes);
    r.expect_magic(kMagic);
    const std::uint32_t version = r.get_u32();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " at byte offset 8");

    Checkpoint ckpt;
    ckpt.config_text = r.get_string();
    const std::uint32_t count = r.get_u32();
    if (count > 1u << 20)
        throw FormatError("implausible tensor count " + std::to_string(count));
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.get_string();
        const std::uint32_t rank = r.get_u32();
        if (rank == 0 || rank > 8)
            throw FormatError("implausible rank " + std::to_string(rank) + " for tensor '" + name +
                              "' at byte offset " + std::to_string(r.offset() - 4));
        std::vector<int> shape(rank);
        std::int64_t numel = 1;
        for (auto& e : shape) {
            e = r.get_i32();
            if (e <= 0 || e > (1 << 24))
                throw FormatError("implausible extent " + std::to_string(e) + " for tensor '" +
                                  name + "'");
            numel *= e;
        }
        if (static_cast<std::uint64_t>(numel) * 4 > bytes.size())
            throw FormatError("tensor '" + name + "' larger than the file itself");
        TensorF t(shape);
        for (auto& v : t.data()) v = r.get_f32();
        ckpt.tensors.emplace_back(name, std::move(t));
    }
    if (r.remaining() != 8)
        throw FormatError("trailing garbage at byte offset " + std::to_string(r.offset()));
    return ckpt;
}

void assign_named_tensors(std::vector<std::pair<std::string, TensorF>> dst,
                          const std::vector<std::pair<std::string, TensorF>>& src,
                          const std::string& which) {
    std::map<std::string, TensorF> by_name;
    for (const auto& [name, t] : src) by_name.emplace(name, t);
    for (auto& [name, target] : dst) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw ContractError(which + " is missing tensor '" + name + "'");
        if (it->second.shape() != target.shape())
            throw ContractError(which + " tensor '" + name + "' has shape " +
                                it->second.shape_str() + ", expected " + target.shape_str());
        target.data() = it->second.data();
    }
}

}  // namespace emma
