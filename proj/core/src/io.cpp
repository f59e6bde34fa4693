#include "diffcap/io.hpp"

#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "diffcap/errors.hpp"

namespace diffcap {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("tensor archive: truncated file");
    return v;
}

}  // namespace

void save_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write archive: " + path.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, tensors.size());
    for (const auto& t : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint8_t>(os, kDtypeF64);
        put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.rows()));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.cols()));
        for (int i = 0; i < t.value.rows(); ++i)
            for (int j = 0; j < t.value.cols(); ++j) put<double>(os, t.value(i, j));
    }
    if (!os) throw DataError("archive write failed: " + path.string());
}

std::vector<NamedTensor> load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read archive: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a tensor archive: " + path.string());
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion)
        throw DataError("unsupported archive version " + std::to_string(version));
    const auto count = get<std::uint64_t>(is);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = get<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("tensor archive: truncated name");
        const auto dtype = get<std::uint8_t>(is);
        const auto rows = get<std::uint64_t>(is);
        const auto cols = get<std::uint64_t>(is);
        if (rows > (1u << 26) || cols > (1u << 26))
            throw DataError("tensor archive: implausible shape for " + name);
        Matrix m(static_cast<int>(rows), static_cast<int>(cols));
        for (std::uint64_t i = 0; i < rows; ++i)
            for (std::uint64_t j = 0; j < cols; ++j) {
                double v;
                if (dtype == kDtypeF64)
                    v = get<double>(is);
                else if (dtype == kDtypeF32)
                    v = static_cast<double>(get<float>(is));
                else
                    throw DataError("tensor archive: unknown dtype for " + name);
                m(static_cast<int>(i), static_cast<int>(j)) = v;
            }
        out.push_back({std::move(name), std::move(m)});
    }
    return out;
}

void save_parameters(const std::filesystem::path& path, const ParameterStore& store) {
    std::vector<NamedTensor> ts;
    ts.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
        ts.push_back({store[i].name, store[i].value});
    save_archive(path, ts);
}

void load_parameters(const std::filesystem::path& path, ParameterStore& store) {
    for (auto& t : load_archive(path)) {
        if (store.contains(t.name)) {
            Parameter& p = store.at(t.name);
            if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols())
                throw DataError("checkpoint shape mismatch for " + t.name);
            p.value = std::move(t.value);
        } else {
            Parameter& p = store.create(t.name, static_cast<int>(t.value.rows()),
                                        static_cast<int>(t.value.cols()));
            p.value = std::move(t.value);
        }
    }
}

std::string git_blob_sha1(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string git_blob_sha1_file(const std::filesystem::path& path) {
    return git_blob_sha1(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read file: " + path.string());
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write file: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("write failed: " + path.string());
}

ManifestBuilder::ManifestBuilder(std::string tool) {
    j_["tool"] = std::move(tool);
    j_["inputs"] = Json::object();
    j_["outputs"] = Json::object();
}

void ManifestBuilder::set_config(Json config) { j_["config"] = std::move(config); }
void ManifestBuilder::set_seed(std::uint64_t seed) { j_["seed"] = seed; }

void ManifestBuilder::add_input(const std::string& label, const std::filesystem::path& path) {
    j_["inputs"][label] = {{"path", path.string()}, {"sha1", git_blob_sha1_file(path)}};
}

void ManifestBuilder::add_output(const std::string& label, const std::filesystem::path& path) {
    j_["outputs"][label] = {{"path", path.string()}, {"sha1", git_blob_sha1_file(path)}};
}

void ManifestBuilder::add_note(const std::string& key, const Json& value) { j_[key] = value; }

void ManifestBuilder::write(const std::filesystem::path& path) const {
    write_file(path, j_.dump(2) + "\n");
}

}  // namespace diffcap
