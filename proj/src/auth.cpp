/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/auth.hpp>

#include <array>
#include <chrono>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

namespace rm {

namespace {

constexpr char cAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
constexpr int cIterations = 10'000;
constexpr std::size_t cSaltBytes = 16;
constexpr std::size_t cHashBytes = 32;

std::string toHex(const unsigned char* data, std::size_t size)
{
    static constexpr char cDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(size * 2);
    for (std::size_t i = 0; i < size; ++i) {
        out += cDigits[data[i] >> 4];
        out += cDigits[data[i] & 0xF];
    }
    return out;
}

std::optional<std::string> fromHex(std::string_view text)
{
    if (text.size() % 2 != 0) {
        return std::nullopt;
    }
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') {
            return c - '0';
        }
        if (c >= 'a' && c <= 'f') {
            return c - 'a' + 10;
        }
        return -1;
    };
    std::string out;
    for (std::size_t i = 0; i < text.size(); i += 2) {
        int hi = nibble(text[i]);
        int lo = nibble(text[i + 1]);
        if (hi < 0 || lo < 0) {
            return std::nullopt;
        }
        out += static_cast<char>(hi << 4 | lo);
    }
    return out;
}

std::string derive(std::string_view password, const std::string& salt, int iterations)
{
    std::array<unsigned char, cHashBytes> out {};
    if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()),
            reinterpret_cast<const unsigned char*>(salt.data()), static_cast<int>(salt.size()), iterations,
            EVP_sha256(), static_cast<int>(out.size()), out.data())
        != 1) {
        throw Error(ErrorCode::Internal, "password hashing failed");
    }
    return std::string(reinterpret_cast<const char*>(out.data()), out.size());
}

Error unauthorized(const std::string& why)
{
    return Error(ErrorCode::Unauthorized, why);
}

} // namespace

std::int64_t nowSeconds()
{
    using namespace std::chrono;
    return duration_cast<seconds>(system_clock::now().time_since_epoch()).count();
}

std::string base64UrlEncode(std::string_view data)
{
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < data.size(); i += 3) {
        std::uint32_t n = static_cast<unsigned char>(data[i]) << 16 | static_cast<unsigned char>(data[i + 1]) << 8
            | static_cast<unsigned char>(data[i + 2]);
        out += cAlphabet[n >> 18 & 63];
        out += cAlphabet[n >> 12 & 63];
        out += cAlphabet[n >> 6 & 63];
        out += cAlphabet[n & 63];
    }
    std::size_t rest = data.size() - i;
    if (rest == 1) {
        std::uint32_t n = static_cast<unsigned char>(data[i]) << 16;
        out += cAlphabet[n >> 18 & 63];
        out += cAlphabet[n >> 12 & 63];
    } else if (rest == 2) {
        std::uint32_t n = static_cast<unsigned char>(data[i]) << 16 | static_cast<unsigned char>(data[i + 1]) << 8;
        out += cAlphabet[n >> 18 & 63];
        out += cAlphabet[n >> 12 & 63];
        out += cAlphabet[n >> 6 & 63];
    }
    return out;
}

std::string base64UrlDecode(std::string_view text)
{
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') {
            return c - 'A';
        }
        if (c >= 'a' && c <= 'z') {
            return c - 'a' + 26;
        }
        if (c >= '0' && c <= '9') {
            return c - '0' + 52;
        }
        if (c == '-') {
            return 62;
        }
        if (c == '_') {
            return 63;
        }
        return -1;
    };
    if (text.size() % 4 == 1) {
        throw Error(ErrorCode::InvalidArgument, "truncated base64url text");
    }
    std::string out;
    std::uint32_t buffer = 0;
    int bits = 0;
    for (char c : text) {
        int v = value(c);
        if (v < 0) {
            throw Error(ErrorCode::InvalidArgument, "invalid base64url character");
        }
        buffer = buffer << 6 | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>(buffer >> bits & 0xFF);
        }
    }
    return out;
}

std::string hashPassword(std::string_view password)
{
    std::array<unsigned char, cSaltBytes> salt {};
    if (RAND_bytes(salt.data(), static_cast<int>(salt.size())) != 1) {
        throw Error(ErrorCode::Internal, "no randomness for salt");
    }
    std::string saltBytes(reinterpret_cast<const char*>(salt.data()), salt.size());
    auto hash = derive(password, saltBytes, cIterations);
    return "pbkdf2$" + std::to_string(cIterations) + "$" + toHex(salt.data(), salt.size()) + "$"
        + toHex(reinterpret_cast<const unsigned char*>(hash.data()), hash.size());
}

bool verifyPassword(std::string_view password, std::string_view encoded)
{
    auto next = [&encoded]() {
        auto pos = encoded.find('$');
        auto part = encoded.substr(0, pos);
        encoded = pos == std::string_view::npos ? std::string_view {} : encoded.substr(pos + 1);
        return part;
    };
    if (next() != "pbkdf2") {
        return false;
    }
    auto iterationsText = next();
    auto salt = fromHex(next());
    auto expected = fromHex(next());
    int iterations = 0;
    for (char c : iterationsText) {
        if (c < '0' || c > '9' || iterations > 10'000'000) {
            return false;
        }
        iterations = iterations * 10 + (c - '0');
    }
    if (iterations <= 0 || !salt || !expected || expected->size() != cHashBytes) {
        return false;
    }
    auto actual = derive(password, *salt, iterations);
    return CRYPTO_memcmp(actual.data(), expected->data(), cHashBytes) == 0;
}

TokenSigner::TokenSigner(std::string secret, std::int64_t ttlSeconds)
    : mSecret(std::move(secret))
    , mTtlSeconds(ttlSeconds)
{
    if (mSecret.empty()) {
        throw Error(ErrorCode::ConfigError, "authSecret must not be empty", {{"field", "authSecret"}});
    }
    if (mTtlSeconds <= 0) {
        throw Error(ErrorCode::ConfigError, "tokenTtlSeconds must be positive", {{"field", "tokenTtlSeconds"}});
    }
}

std::string TokenSigner::sign(std::string_view signingInput) const
{
    unsigned char mac[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (!HMAC(EVP_sha256(), mSecret.data(), static_cast<int>(mSecret.size()),
            reinterpret_cast<const unsigned char*>(signingInput.data()), signingInput.size(), mac, &length)) {
        throw Error(ErrorCode::Internal, "token signing failed");
    }
    return std::string(reinterpret_cast<const char*>(mac), length);
}

std::string TokenSigner::issue(const std::string& subject, std::int64_t now) const
{
    static const std::string cHeader = base64UrlEncode(R"({"alg":"HS256","typ":"JWT"})");
    nlohmann::json claims = {{"sub", subject}, {"iat", now}, {"exp", now + mTtlSeconds}};
    std::string input = cHeader + "." + base64UrlEncode(claims.dump());
    return input + "." + base64UrlEncode(sign(input));
}

TokenClaims TokenSigner::verify(std::string_view token, std::int64_t now) const
{
    auto first = token.find('.');
    auto second = first == std::string_view::npos ? first : token.find('.', first + 1);
    if (second == std::string_view::npos || token.find('.', second + 1) != std::string_view::npos) {
        throw unauthorized("malformed token");
    }
    std::string_view input = token.substr(0, second);
    std::string signature;
    nlohmann::json header;
    nlohmann::json claims;
    try {
        signature = base64UrlDecode(token.substr(second + 1));
        header = nlohmann::json::parse(base64UrlDecode(token.substr(0, first)));
        claims = nlohmann::json::parse(base64UrlDecode(token.substr(first + 1, second - first - 1)));
    } catch (const std::exception&) {
        throw unauthorized("malformed token");
    }
    std::string expected = sign(input);
    if (signature.size() != expected.size()
        || CRYPTO_memcmp(signature.data(), expected.data(), expected.size()) != 0) {
        throw unauthorized("bad token signature");
    }
    if (!header.is_object() || header.value("alg", "") != "HS256") {
        throw unauthorized("unsupported token algorithm");
    }
    if (!claims.is_object() || !claims.contains("sub") || !claims.at("sub").is_string() || !claims.contains("exp")
        || !claims.at("exp").is_number_integer()) {
        throw unauthorized("incomplete token claims");
    }
    TokenClaims result;
    result.subject = claims.at("sub").get<std::string>();
    result.issuedAt = claims.value("iat", std::int64_t {0});
    result.expiresAt = claims.at("exp").get<std::int64_t>();
    if (now >= result.expiresAt) {
        throw unauthorized("token expired");
    }
    return result;
}

Authenticator::Authenticator(Store& store, TokenSigner signer)
    : mStore(store)
    , mSigner(std::move(signer))
{
}

std::string Authenticator::login(const std::string& user, const std::string& password) const
{
    static const std::string cDummy = hashPassword("not-a-user");
    auto stored = mStore.userPasswordHash(user);
    bool ok = verifyPassword(password, stored ? *stored : cDummy);
    if (!stored || !ok) {
        throw Error(ErrorCode::InvalidCredentials, "invalid user or password");
    }
    return mSigner.issue(user, nowSeconds());
}

TokenClaims Authenticator::verify(std::string_view token) const
{
    return mSigner.verify(token, nowSeconds());
}

void Authenticator::addUser(const std::string& user, const std::string& password)
{
    if (user.empty()) {
        throw Error(ErrorCode::InvalidArgument, "user name must not be empty");
    }
    mStore.putUser(user, hashPassword(password));
}

} // namespace rm
