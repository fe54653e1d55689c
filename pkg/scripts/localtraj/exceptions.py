# Copyright 2016-2019 Florian Pigorsch & Contributors. All rights reserved.
#
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.


class LocalTrajError(Exception):
    "Base class for all errors"
    pass


class ParameterError(LocalTrajError):
    "Something's wrong with user supplied parameters or configuration"
    pass


class ShapeError(LocalTrajError):
    "Two grids that should line up pixel for pixel don't"
    pass


class InvalidDepthError(LocalTrajError):
    "A depth sample is zero, negative or not finite"
    pass


class InvalidPointError(LocalTrajError):
    "A 3D point has Z <= 0 so the scene-flow mapping is undefined there"
    pass


class BehindCameraError(InvalidPointError):
    "A 3D point has Z <= 0 and cannot be projected"
    pass


class OutOfBoundsError(LocalTrajError):
    "A tracked point left the image, its trajectory is terminated"
    pass


class SequenceTooShortError(LocalTrajError):
    "Fewer frames than one trajectory needs"
    pass


class FlowFormatError(LocalTrajError):
    "A .flo / .sf3 / .pgm file has a bad header"
    pass


class TruncatedFileError(LocalTrajError, OSError):
    "A binary file ended before its header said it would"
    pass


class ArchiveFormatError(LocalTrajError):
    "A .tlar / .tlcb / .tlmd file is not one we can read"
    pass


class NoOverlapError(LocalTrajError):
    "A trajectory and a joint track share no frames"
    pass


class NoJointsError(LocalTrajError):
    "Localization was asked to run without any joint track"
    pass


class InsufficientDataError(LocalTrajError):
    "Fewer samples than the estimator needs"
    pass


class DegenerateLabelsError(LocalTrajError):
    "Training labels contain a single class"
    pass


class ManifestError(LocalTrajError):
    "The dataset manifest references something missing or inconsistent"
    pass


class VideoLoadError(LocalTrajError):
    "Something went wrong when loading a video, we just skip this video and continue"
    pass
