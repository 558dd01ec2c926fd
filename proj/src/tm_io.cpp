#include "fiberpiano/tm_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fiberpiano/errors.hpp"

namespace fiberpiano {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'P', 'T', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kJsonFormat = "fiberpiano.tm/1";

static_assert(std::endian::native == std::endian::little, "binary TM format assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error("truncated transmission-matrix file");
    return value;
}

}  // namespace

nlohmann::json tm_to_json(const TransmissionMatrix& tm) {
    nlohmann::json j;
    j["format"] = kJsonFormat;
    j["rows"] = tm.matrix.rows();
    j["cols"] = tm.matrix.cols();
    j["bank_seed"] = tm.bank_seed;
    j["segment_seed"] = tm.segment_seed;
    j["displacements"] = tm.displacements;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(2 * tm.matrix.size()));
    for (Eigen::Index r = 0; r < tm.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < tm.matrix.cols(); ++c) {
            data.push_back(tm.matrix(r, c).real());
            data.push_back(tm.matrix(r, c).imag());
        }
    j["data"] = std::move(data);
    return j;
}

TransmissionMatrix tm_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kJsonFormat) throw Error("not a fiberpiano transmission-matrix document");
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != 2 * rows * cols)
        throw DimensionError("transmission-matrix data length does not match rows x cols");

    TransmissionMatrix tm;
    tm.bank_seed = j.at("bank_seed").get<std::uint64_t>();
    tm.segment_seed = j.at("segment_seed").get<std::uint64_t>();
    tm.displacements = j.at("displacements").get<std::vector<double>>();
    tm.matrix.resize(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c, i += 2) tm.matrix(r, c) = cd(data[i], data[i + 1]);
    return tm;
}

void write_tm_binary(std::ostream& out, const TransmissionMatrix& tm) {
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tm.matrix.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tm.matrix.cols()));
    put<std::uint64_t>(out, tm.bank_seed);
    put<std::uint64_t>(out, tm.segment_seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tm.displacements.size()));
    for (double v : tm.displacements) put<double>(out, v);
    for (Eigen::Index r = 0; r < tm.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < tm.matrix.cols(); ++c) {
            put<double>(out, tm.matrix(r, c).real());
            put<double>(out, tm.matrix(r, c).imag());
        }
}

TransmissionMatrix read_tm_binary(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw Error("not a fiberpiano transmission-matrix file");
    if (const auto version = get<std::uint32_t>(in); version != kVersion)
        throw Error("unsupported transmission-matrix file version " + std::to_string(version));

    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    TransmissionMatrix tm;
    tm.bank_seed = get<std::uint64_t>(in);
    tm.segment_seed = get<std::uint64_t>(in);
    tm.displacements.resize(get<std::uint32_t>(in));
    for (double& v : tm.displacements) v = get<double>(in);
    tm.matrix.resize(rows, cols);
    for (Eigen::Index r = 0; r < tm.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < tm.matrix.cols(); ++c) {
            const double re = get<double>(in);
            const double im = get<double>(in);
            tm.matrix(r, c) = cd(re, im);
        }
    return tm;
}

void save_tm(const std::filesystem::path& path, const TransmissionMatrix& tm) {
    if (path.extension() == ".json") {
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        // max_digits10 keeps the dump bit-exact on reload.
        out << tm_to_json(tm).dump() << '\n';
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_tm_binary(out, tm);
}

TransmissionMatrix load_tm(const std::filesystem::path& path) {
    if (path.extension() == ".json") {
        std::ifstream in(path);
        if (!in) throw Error("cannot read " + path.string());
        return tm_from_json(nlohmann::json::parse(in));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return read_tm_binary(in);
}

}  // namespace fiberpiano
