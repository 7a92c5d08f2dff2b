#include "iclids/error.hpp"

namespace iclids {

std::string_view errc_name(Errc c) {
    switch (c) {
        case Errc::MissingFile: return "MissingFile";
        case Errc::SchemaMismatch: return "SchemaMismatch";
        case Errc::EmptyDataset: return "EmptyDataset";
        case Errc::NonNumericFeature: return "NonNumericFeature";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::UnknownClassName: return "UnknownClassName";
        case Errc::InvalidSpec: return "InvalidSpec";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::EmptyMixture: return "EmptyMixture";
        case Errc::InvalidCount: return "InvalidCount";
        case Errc::TooManyClassifiers: return "TooManyClassifiers";
        case Errc::DegenerateTraining: return "DegenerateTraining";
        case Errc::InvalidAccuracy: return "InvalidAccuracy";
        case Errc::EmptyClass: return "EmptyClass";
        case Errc::IncompatibleMode: return "IncompatibleMode";
        case Errc::ShotsOutOfRange: return "ShotsOutOfRange";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::ModeMismatch: return "ModeMismatch";
        case Errc::LengthExceeded: return "LengthExceeded";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::InvalidRate: return "InvalidRate";
        case Errc::InvalidBatch: return "InvalidBatch";
        case Errc::EmptyTable: return "EmptyTable";
        case Errc::MissingCell: return "MissingCell";
        case Errc::ConfigInvalid: return "ConfigInvalid";
        case Errc::MissingArtifact: return "MissingArtifact";
        case Errc::Internal: return "Internal";
    }
    return "Internal";
}

int errc_exit_code(Errc c) {
    switch (c) {
        case Errc::ConfigInvalid:
        case Errc::InvalidConfig:
        case Errc::InvalidSpec:
        case Errc::InvalidCount:
        case Errc::InvalidAccuracy:
        case Errc::InvalidRate:
        case Errc::InvalidBatch:
        case Errc::ShotsOutOfRange:
            return 2;
        case Errc::MissingFile:
        case Errc::MissingArtifact:
            return 3;
        case Errc::SchemaMismatch:
        case Errc::DimensionMismatch:
        case Errc::ShapeMismatch:
        case Errc::UnknownClassName:
        case Errc::NonNumericFeature:
        case Errc::IncompatibleMode:
        case Errc::ModeMismatch:
        case Errc::LengthExceeded:
        case Errc::MissingCell:
            return 4;
        case Errc::EmptyDataset:
        case Errc::EmptyClass:
        case Errc::EmptyMixture:
        case Errc::EmptyTable:
            return 5;
        case Errc::DegenerateTraining:
        case Errc::NonFiniteLoss:
            return 6;
        case Errc::CorruptCheckpoint:
        case Errc::VersionMismatch:
            return 7;
        case Errc::TooManyClassifiers:
            return 2;
        case Errc::Internal:
            return 1;
    }
    return 1;
}

}  // namespace iclids
