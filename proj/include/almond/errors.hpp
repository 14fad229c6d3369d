#pragma once

#include <stdexcept>
#include <string>

namespace almond {

// Root of every error the library raises. Callers that only care about
// "something failed" catch this; tests and the CLI catch the leaves.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;

protected:
  struct Prefixed {};
  Error(Prefixed, const std::string& full) : std::runtime_error(full) {}
};

#define ALMOND_DECLARE_ERROR_FROM(Name, Base)                                  \
  class Name : public Base {                                                   \
  public:                                                                      \
    explicit Name(const std::string& what) : Base(Prefixed{}, #Name ": " + what) {} \
                                                                               \
  protected:                                                                   \
    Name(Prefixed p, const std::string& full) : Base(p, full) {}               \
  }
#define ALMOND_DECLARE_ERROR(Name) ALMOND_DECLARE_ERROR_FROM(Name, Error)

// annotation ingest
ALMOND_DECLARE_ERROR(MalformedXml);
ALMOND_DECLARE_ERROR(MissingField);
ALMOND_DECLARE_ERROR(InvalidBox);
ALMOND_DECLARE_ERROR(DimensionMismatch);
ALMOND_DECLARE_ERROR(MissingImage);

// image processing
ALMOND_DECLARE_ERROR(InvalidKernel);
ALMOND_DECLARE_ERROR(InvalidRadius);
ALMOND_DECLARE_ERROR(InvalidBlockSize);
ALMOND_DECLARE_ERROR(InvalidThresholds);
ALMOND_DECLARE_ERROR(InvalidImage);

// dataset
ALMOND_DECLARE_ERROR(EmptyClass);
ALMOND_DECLARE_ERROR(TooFewSamples);
ALMOND_DECLARE_ERROR(InvalidSize);
ALMOND_DECLARE_ERROR(InvalidFraction);
ALMOND_DECLARE_ERROR(SchemaMismatch);

// nn core / model
ALMOND_DECLARE_ERROR(ShapeMismatch);
ALMOND_DECLARE_ERROR(ZeroBatch);
ALMOND_DECLARE_ERROR(InvalidRate);
ALMOND_DECLARE_ERROR(InvalidLayer);
ALMOND_DECLARE_ERROR(StaleCache);
ALMOND_DECLARE_ERROR(NonFiniteGradient);
// A pooling window that no longer fits; also a ShapeMismatch.
ALMOND_DECLARE_ERROR_FROM(ShapeUnderflow, ShapeMismatch);
ALMOND_DECLARE_ERROR(VersionMismatch);

// pipeline
ALMOND_DECLARE_ERROR(IoError);
ALMOND_DECLARE_ERROR(DivergedLoss);
ALMOND_DECLARE_ERROR(EmptyMatrix);
ALMOND_DECLARE_ERROR(EmptyDataset);
ALMOND_DECLARE_ERROR(LabelMismatch);
ALMOND_DECLARE_ERROR(InvalidConfig);

#undef ALMOND_DECLARE_ERROR
#undef ALMOND_DECLARE_ERROR_FROM

}  // namespace almond
