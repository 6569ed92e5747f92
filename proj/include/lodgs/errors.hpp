// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lodgs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Primitive or position lies on or behind the camera near plane.
class CulledBehindCamera : public Error {
public:
    CulledBehindCamera() : Error("primitive is behind the camera near plane") {}
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// No training camera sees the queried position.
class NoVisibleView : public Error {
public:
    NoVisibleView() : Error("position is not in front of any camera") {}
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class TooSmall : public Error {
public:
    using Error::Error;
};

/// backward() was called without the forward state of the same render.
class MismatchedForward : public Error {
public:
    using Error::Error;
};

/// Malformed or missing input file (scene, manifest, image).
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace lodgs
