#include "emma/dataset_io.hpp"

#include <fstream>

#include "emma/digest.hpp"

namespace emma {

namespace {

constexpr char kMagic[9] = "EMMADATA";
constexpr std::uint32_t kVersion = 1;

void put_id_list(std::vector<unsigned char>& out, const std::vector<int>& ids) {
    put_i32(out, static_cast<std::int32_t>(ids.size()));
    for (int id : ids) put_i32(out, id);
}

std::vector<int> get_id_list(ByteReader& r, std::int32_t max_len, const char* what) {
    const std::size_t at = r.offset();
    const std::int32_t count = r.get_i32();
    if (count < 0 || count > max_len)
        throw FormatError(std::string("implausible ") + what + " count " + std::to_string(count) +
                          " at byte offset " + std::to_string(at));
    std::vector<int> ids(static_cast<std::size_t>(count));
    for (auto& id : ids) id = r.get_i32();
    return ids;
}

}  // namespace

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on '" + path + "'");
}

std::uint64_t file_digest(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

Dataset generate_dataset(const WorldConfig& config, std::uint64_t master_seed, std::int64_t count) {
    if (count < 1) throw ConfigError("dataset needs at least one sample");
    Dataset ds;
    ds.world = config;
    ds.master_seed = master_seed;
    World world(config, master_seed);
    ds.samples.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) ds.samples.push_back(world.make_sample(i));
    return ds;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    std::vector<unsigned char> out;
    put_bytes(out, kMagic, 8);
    put_u32(out, kVersion);
    put_i32(out, dataset.world.grid_h);
    put_i32(out, dataset.world.grid_w);
    put_i32(out, dataset.world.num_colors);
    put_i32(out, dataset.world.num_shapes);
    put_f32(out, dataset.world.noise_std);
    put_f64(out, dataset.world.ambiguous_fraction);
    put_u64(out, dataset.master_seed);
    put_i64(out, static_cast<std::int64_t>(dataset.samples.size()));
    for (const auto& s : dataset.samples) {
        put_u64(out, s.sample_seed);
        out.push_back(static_cast<unsigned char>(s.family));
        out.push_back(s.ambiguous ? 1 : 0);
        put_i32(out, s.answer);
        put_i32(out, static_cast<std::int32_t>(s.objects.size()));
        for (const auto& o : s.objects) {
            put_i32(out, o.color);
            put_i32(out, o.shape);
        }
        for (int p : s.positions) put_i32(out, p);
        put_id_list(out, s.instruction);
        put_id_list(out, s.caption);
        put_i32(out, s.patches.rows());
        put_i32(out, s.patches.cols());
        for (float v : s.patches.data()) put_f32(out, v);
    }
    put_u64(out, fnv1a64(out.data(), out.size()));
    write_file_bytes(path, out);
}

Dataset load_dataset(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8 + 4 + 8)
        throw FormatError("file too short to be a dataset (" + std::to_string(bytes.size()) +
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
        throw FormatError("unsupported dataset version " + std::to_string(version) +
                          " at byte offset 8");

    Dataset ds;
    ds.world.grid_h = r.get_i32();
    ds.world.grid_w = r.get_i32();
    ds.world.num_colors = r.get_i32();
    ds.world.num_shapes = r.get_i32();
    ds.world.noise_std = r.get_f32();
    ds.world.ambiguous_fraction = r.get_f64();
    ds.world.validate();
    ds.master_seed = r.get_u64();
    const std::int64_t count = r.get_i64();
    if (count < 0 || static_cast<std::uint64_t>(count) > bytes.size())
        throw FormatError("implausible sample count " + std::to_string(count));

    ds.samples.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        Sample s;
        s.sample_seed = r.get_u64();
        s.family = static_cast<SceneFamily>(r.get_byte());
        if (s.family != SceneFamily::two_distinct && s.family != SceneFamily::single &&
            s.family != SceneFamily::same_color && s.family != SceneFamily::same_shape)
            throw FormatError("unknown scene family at byte offset " +
                              std::to_string(r.offset() - 1));
        s.ambiguous = r.get_byte() != 0;
        s.answer = r.get_i32();
        const std::int32_t objects = r.get_i32();
        if (objects < 1 || objects > 8)
            throw FormatError("implausible object count " + std::to_string(objects) +
                              " at byte offset " + std::to_string(r.offset() - 4));
        s.objects.resize(static_cast<std::size_t>(objects));
        for (auto& o : s.objects) {
            o.color = r.get_i32();
            o.shape = r.get_i32();
        }
        s.positions.resize(static_cast<std::size_t>(objects));
        for (auto& p : s.positions) p = r.get_i32();
        s.instruction = get_id_list(r, 1 << 16, "instruction token");
        s.caption = get_id_list(r, 1 << 16, "caption token");
        const std::int32_t rows = r.get_i32();
        const std::int32_t cols = r.get_i32();
        if (rows != ds.world.cells() || cols != ds.world.patch_width())
            throw FormatError("patch grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " does not match the config echo at byte offset " +
                              std::to_string(r.offset() - 8));
        s.patches = TensorF({rows, cols});
        for (auto& v : s.patches.data()) v = r.get_f32();
        ds.samples.push_back(std::move(s));
    }
    if (r.remaining() != 8)
        throw FormatError("trailing garbage at byte offset " + std::to_string(r.offset()));
    return ds;
}

}  // namespace emma
