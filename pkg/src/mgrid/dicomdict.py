# Built-in tag dictionary used to resolve VRs in implicit-VR streams and
# to attach keyword attributes in the XML rendering.  Covers the metadata
# schema attributes, the file-meta group, the command-set group 0000 and a
# few sequence tags used in tests; unknown tags fall back to VR "UN".

# (group, element) -> (vr, keyword)
TAG_DICT = {
    # command set (group 0000), always implicit VR LE
    (0x0000, 0x0000): ("UL", "CommandGroupLength"),
    (0x0000, 0x0002): ("UI", "AffectedSOPClassUID"),
    (0x0000, 0x0100): ("US", "CommandField"),
    (0x0000, 0x0110): ("US", "MessageID"),
    (0x0000, 0x0120): ("US", "MessageIDBeingRespondedTo"),
    (0x0000, 0x0700): ("US", "Priority"),
    (0x0000, 0x0800): ("US", "CommandDataSetType"),
    (0x0000, 0x0900): ("US", "Status"),
    (0x0000, 0x1000): ("UI", "AffectedSOPInstanceUID"),
    # file meta (group 0002), always explicit VR LE
    (0x0002, 0x0000): ("UL", "FileMetaInformationGroupLength"),
    (0x0002, 0x0001): ("OB", "FileMetaInformationVersion"),
    (0x0002, 0x0002): ("UI", "MediaStorageSOPClassUID"),
    (0x0002, 0x0003): ("UI", "MediaStorageSOPInstanceUID"),
    (0x0002, 0x0010): ("UI", "TransferSyntaxUID"),
    (0x0002, 0x0012): ("UI", "ImplementationClassUID"),
    (0x0002, 0x0013): ("SH", "ImplementationVersionName"),
    # study / equipment
    (0x0008, 0x0005): ("CS", "SpecificCharacterSet"),
    (0x0008, 0x002A): ("DT", "AcquisitionDateTime"),
    (0x0008, 0x0054): ("AE", "RetrieveAETitle"),
    (0x0008, 0x0081): ("ST", "InstitutionAddress"),
    (0x0008, 0x0008): ("CS", "ImageType"),
    (0x0008, 0x0016): ("UI", "SOPClassUID"),
    (0x0008, 0x0018): ("UI", "SOPInstanceUID"),
    (0x0008, 0x0020): ("DA", "StudyDate"),
    (0x0008, 0x0023): ("DA", "ContentDate"),
    (0x0008, 0x0030): ("TM", "StudyTime"),
    (0x0008, 0x0050): ("SH", "AccessionNumber"),
    (0x0008, 0x0060): ("CS", "Modality"),
    (0x0008, 0x0070): ("LO", "Manufacturer"),
    (0x0008, 0x0080): ("LO", "InstitutionName"),
    (0x0008, 0x0090): ("PN", "ReferringPhysicianName"),
    (0x0008, 0x1030): ("LO", "StudyDescription"),
    (0x0008, 0x103E): ("LO", "SeriesDescription"),
    (0x0008, 0x1070): ("PN", "OperatorsName"),
    (0x0008, 0x1140): ("SQ", "ReferencedImageSequence"),
    (0x0008, 0x1150): ("UI", "ReferencedSOPClassUID"),
    (0x0008, 0x1155): ("UI", "ReferencedSOPInstanceUID"),
    # patient
    (0x0010, 0x0010): ("PN", "PatientName"),
    (0x0010, 0x0020): ("LO", "PatientID"),
    (0x0010, 0x0030): ("DA", "PatientBirthDate"),
    (0x0010, 0x0040): ("CS", "PatientSex"),
    (0x0010, 0x1000): ("LO", "OtherPatientIDs"),
    (0x0010, 0x1010): ("AS", "PatientAge"),
    (0x0010, 0x21B0): ("LT", "AdditionalPatientHistory"),
    (0x0010, 0x1001): ("PN", "OtherPatientNames"),
    (0x0010, 0x1040): ("LO", "PatientAddress"),
    # acquisition
    (0x0018, 0x1110): ("DS", "DistanceSourceToDetector"),
    (0x0018, 0x1150): ("IS", "ExposureTime"),
    (0x0018, 0x1164): ("DS", "ImagerPixelSpacing"),
    (0x0018, 0x5101): ("CS", "ViewPosition"),
    (0x0018, 0x6020): ("SL", "ReferencePixelX0"),
    (0x0018, 0x7030): ("DS", "FieldOfViewOrigin"),
    # relationship
    (0x0020, 0x000D): ("UI", "StudyInstanceUID"),
    (0x0020, 0x000E): ("UI", "SeriesInstanceUID"),
    (0x0020, 0x0010): ("SH", "StudyID"),
    (0x0020, 0x0011): ("IS", "SeriesNumber"),
    (0x0020, 0x0013): ("IS", "InstanceNumber"),
    (0x0020, 0x0060): ("CS", "Laterality"),
    (0x0020, 0x0062): ("CS", "ImageLaterality"),
    # image pixel description
    (0x0028, 0x0002): ("US", "SamplesPerPixel"),
    (0x0028, 0x0004): ("CS", "PhotometricInterpretation"),
    (0x0028, 0x0010): ("US", "Rows"),
    (0x0028, 0x0011): ("US", "Columns"),
    (0x0028, 0x0030): ("DS", "PixelSpacing"),
    (0x0028, 0x0100): ("US", "BitsAllocated"),
    (0x0028, 0x0101): ("US", "BitsStored"),
    (0x0028, 0x0102): ("US", "HighBit"),
    (0x0028, 0x0103): ("US", "PixelRepresentation"),
    (0x0028, 0x1041): ("SS", "PixelIntensityRelationshipSign"),
    # misc / sequences used in tests
    (0x0040, 0x0275): ("SQ", "RequestAttributesSequence"),
    (0x0040, 0x1001): ("SH", "RequestedProcedureID"),
    # pixel data
    (0x7FE0, 0x0010): ("OW", "PixelData"),
}

KEYWORD_TO_TAG = {kw: tag for tag, (_, kw) in TAG_DICT.items()}


def vr_for_tag(group: int, element: int) -> str:
    """VR for a tag in implicit-VR streams; unknown tags are opaque."""
    if element == 0x0000:
        return "UL"  # any group length
    entry = TAG_DICT.get((group, element))
    return entry[0] if entry else "UN"


def keyword_for_tag(group: int, element: int) -> str | None:
    entry = TAG_DICT.get((group, element))
    return entry[1] if entry else None
