/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_AUTH_HPP_
#define RM_AUTH_HPP_

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include <rm/store.hpp>

namespace rm {

std::string base64UrlEncode(std::string_view data);
/// Throws InvalidArgument on characters outside the URL-safe alphabet.
std::string base64UrlDecode(std::string_view text);

/// PBKDF2-HMAC-SHA256 with a random salt, encoded as pbkdf2$<iterations>$<salt>$<hash>.
std::string hashPassword(std::string_view password);
/// Constant-time comparison against a hashPassword() result.
bool verifyPassword(std::string_view password, std::string_view encoded);

struct TokenClaims {
    std::string subject;
    std::int64_t issuedAt {0};
    std::int64_t expiresAt {0};
};

/**
 * Stateless bearer tokens: compact JWS with HS256. A token stays valid across
 * restarts as long as the secret is unchanged.
 */
class TokenSigner {
public:
    TokenSigner(std::string secret, std::int64_t ttlSeconds);

    std::string issue(const std::string& subject, std::int64_t nowSeconds) const;
    /// Throws Unauthorized for a malformed, forged or expired token.
    TokenClaims verify(std::string_view token, std::int64_t nowSeconds) const;

    std::int64_t ttlSeconds() const noexcept { return mTtlSeconds; }

private:
    std::string sign(std::string_view signingInput) const;

    std::string mSecret;
    std::int64_t mTtlSeconds;
};

/// Login against the users table of the store.
class Authenticator {
public:
    Authenticator(Store& store, TokenSigner signer);

    /// Throws InvalidCredentials.
    std::string login(const std::string& user, const std::string& password) const;
    TokenClaims verify(std::string_view token) const;

    /// Creates or replaces a user.
    void addUser(const std::string& user, const std::string& password);

    const TokenSigner& signer() const noexcept { return mSigner; }

private:
    Store& mStore;
    TokenSigner mSigner;
};

std::int64_t nowSeconds();

} // namespace rm

#endif
